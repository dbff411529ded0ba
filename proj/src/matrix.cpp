#include "dmt/matrix.hpp"

#include <Eigen/Dense>

namespace dmt {

namespace {
using EMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EMapMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
}  // namespace

void gemm(bool ta, bool tb, double alpha, const Mat& A, const Mat& B, double beta, Mat& C) {
  const int m = ta ? A.cols : A.rows;
  const int k = ta ? A.rows : A.cols;
  const int kb = tb ? B.cols : B.rows;
  const int n = tb ? B.rows : B.cols;
  if (k != kb) fail_numeric("gemm: inner dimensions disagree");
  if (beta == 0.0) {
    if (C.rows != m || C.cols != n) C.resize(m, n);
  } else if (C.rows != m || C.cols != n) {
    fail_numeric("gemm: output shape mismatch");
  }

  EMap a(A.d.data(), A.rows, A.cols);
  EMap b(B.d.data(), B.rows, B.cols);
  EMapMut c(C.d.data(), C.rows, C.cols);

  if (beta == 0.0) {
    if (!ta && !tb)
      c.noalias() = alpha * (a * b);
    else if (ta && !tb)
      c.noalias() = alpha * (a.transpose() * b);
    else if (!ta && tb)
      c.noalias() = alpha * (a * b.transpose());
    else
      c.noalias() = alpha * (a.transpose() * b.transpose());
  } else {
    if (beta != 1.0) c *= beta;
    if (!ta && !tb)
      c.noalias() += alpha * (a * b);
    else if (ta && !tb)
      c.noalias() += alpha * (a.transpose() * b);
    else if (!ta && tb)
      c.noalias() += alpha * (a * b.transpose());
    else
      c.noalias() += alpha * (a.transpose() * b.transpose());
  }
}

void gemv(bool ta, double alpha, const Mat& A, const std::vector<double>& x, double beta,
          std::vector<double>& y) {
  const int m = ta ? A.cols : A.rows;
  const int k = ta ? A.rows : A.cols;
  if (static_cast<int>(x.size()) != k) fail_numeric("gemv: dimension mismatch");
  if (beta == 0.0) y.assign(m, 0.0);
  if (static_cast<int>(y.size()) != m) fail_numeric("gemv: output size mismatch");

  EMap a(A.d.data(), A.rows, A.cols);
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), x.size());
  Eigen::Map<Eigen::VectorXd> yv(y.data(), y.size());
  if (beta != 0.0 && beta != 1.0) yv *= beta;
  if (ta)
    yv.noalias() += alpha * (a.transpose() * xv);
  else
    yv.noalias() += alpha * (a * xv);
}

}  // namespace dmt
