#pragma once

#include <cstddef>
#include <vector>

#include "dmt/common.hpp"

namespace dmt {

// Dense row-major matrix of doubles. Small by design; the heavy lifting is the
// gemm below, which maps the buffers into Eigen.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
  double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return d.size(); }

  void fill(double v) { std::fill(d.begin(), d.end(), v); }
  void resize(int r, int c) {
    rows = r;
    cols = c;
    d.assign(static_cast<size_t>(r) * c, 0.0);
  }
};

// C = alpha * op(A) * op(B) + beta * C, with op controlled by ta/tb.
// C is resized when beta == 0; otherwise its shape must already match.
void gemm(bool ta, bool tb, double alpha, const Mat& A, const Mat& B, double beta, Mat& C);

// y = alpha * op(A) * x + beta * y
void gemv(bool ta, double alpha, const Mat& A, const std::vector<double>& x, double beta,
          std::vector<double>& y);

}  // namespace dmt
