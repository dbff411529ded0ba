#include "dmt/evm.hpp"

#include <cmath>
#include <cstring>
#include <utility>

namespace dmt {

namespace {

void check_feature_shape(const Mat& features, size_t n_points, int c) {
  if (features.rows != static_cast<int>(n_points) || features.cols != c)
    fail_data("feature matrix does not match the point cloud / channel width");
}

// Column blocks of the first voting layer: wf acts on the C feature channels,
// wo on the 3 offset channels.
void split_v1(const Dense& v1, int c, Mat& wf, Mat& wo) {
  wf.resize(v1.out(), c);
  wo.resize(v1.out(), 3);
  for (int r = 0; r < v1.out(); ++r) {
    std::memcpy(wf.row(r), v1.W.row(r), sizeof(double) * c);
    std::memcpy(wo.row(r), v1.W.row(r) + c, sizeof(double) * 3);
  }
}

Mat vec3_mat(const Vec3* v, int n) {
  Mat m(n, 3);
  for (int i = 0; i < n; ++i) {
    m.at(i, 0) = v[i].x;
    m.at(i, 1) = v[i].y;
    m.at(i, 2) = v[i].z;
  }
  return m;
}

}  // namespace

EvmParams::EvmParams(int c_, int hidden_, int box_hidden_)
    : c(c_), hidden(hidden_), box_hidden(box_hidden_) {
  if (c < 1 || hidden < 1 || box_hidden < 1) fail_usage("voting head widths must be positive");
  v1 = Dense(c + 3, hidden);
  v2 = Dense(hidden, hidden);
  v3 = Dense(hidden, c);
  vbn1 = BatchNorm(hidden);
  vbn2 = BatchNorm(hidden);
  box1 = Dense(c, box_hidden);
  box2 = Dense(box_hidden, 4);
}

void EvmParams::init(Rng& rng) {
  v1.init(rng);
  v2.init(rng);
  v3.init(rng);
  box1.init(rng);
  box2.init(rng);
}

void EvmParams::collect(std::vector<TensorRef>& out) {
  v1.collect("evm.v1", out);
  vbn1.collect("evm.vbn1", out);
  v2.collect("evm.v2", out);
  vbn2.collect("evm.vbn2", out);
  v3.collect("evm.v3", out);
  box1.collect("evm.box1", out);
  box2.collect("evm.box2", out);
}

void EvmTrainConfig::validate() const {
  if (samples_per_frame < 1) fail_usage("samples_per_frame must be at least 1");
  if (!std::isfinite(max_sample_dist) || max_sample_dist < 0.0)
    fail_usage("max_sample_dist must be finite and non-negative");
}

std::vector<Vec3> sample_training_centers(const Vec3& gt_center, const EvmTrainConfig& cfg,
                                          std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, tag("evm_centers")));
  const double r = cfg.max_sample_dist, r2 = r * r;
  std::vector<Vec3> out;
  out.reserve(cfg.samples_per_frame);
  for (int s = 0; s < cfg.samples_per_frame; ++s) {
    double x, y, z;
    do {
      x = rng.uniform(-r, r);
      y = rng.uniform(-r, r);
      z = rng.uniform(-r, r);
    } while (x * x + y * y + z * z > r2);
    out.push_back(gt_center + Vec3{x, y, z});
  }
  return out;
}

std::vector<double> evm_forward(const FeatureCloud& fused, const Vec3& query,
                                const EvmParams& params) {
  const int m = static_cast<int>(fused.coords.size());
  if (m == 0) fail_data("voting on an empty feature cloud");
  check_feature_shape(fused.features, fused.coords.size(), params.c);

  Mat in(m, params.c + 3);
  for (int i = 0; i < m; ++i) {
    double* row = in.row(i);
    std::memcpy(row, fused.features.row(i), sizeof(double) * params.c);
    const Vec3 off = query - fused.coords[i];
    row[params.c] = off.x;
    row[params.c + 1] = off.y;
    row[params.c + 2] = off.z;
  }

  Mat a = params.v1.forward(in);
  a = params.vbn1.forward_eval(a);
  relu_inplace(a);
  a = params.v2.forward(a);
  a = params.vbn2.forward_eval(a);
  relu_inplace(a);
  a = params.v3.forward(a);

  std::vector<double> fhat;
  std::vector<int> arg;
  maxpool_set(a, fhat, arg);
  return fhat;
}

Box3D predict_box(const std::vector<double>& fhat, const Vec3& query, double h, double w, double l,
                  const EvmParams& params) {
  if (static_cast<int>(fhat.size()) != params.c)
    fail_data("pooled feature width does not match the box head");
  Mat x(1, params.c);
  std::memcpy(x.row(0), fhat.data(), sizeof(double) * fhat.size());
  Mat hid = params.box1.forward(x);
  relu_inplace(hid);
  Mat out = params.box2.forward(hid);
  const Vec3 delta{out.at(0, 0), out.at(0, 1), out.at(0, 2)};
  return make_box(query + delta, h, w, l, out.at(0, 3));
}

Mat evm_train_forward(const Mat& features, const PointCloud& coords,
                      const std::vector<Vec3>& centers, EvmParams& params, EvmBatchCache& cache,
                      BnStats* bn1_stats, BnStats* bn2_stats) {
  const int m = static_cast<int>(coords.size());
  const int s_count = static_cast<int>(centers.size());
  if (m == 0 || s_count == 0) fail_data("voting batch needs points and sampled centers");
  check_feature_shape(features, coords.size(), params.c);

  cache.features = features;
  cache.coords_mat = vec3_mat(coords.data(), m);
  cache.centers_mat = vec3_mat(centers.data(), s_count);

  // Layer 1 by parts: rows of the virtual S*M tuple batch decompose into a
  // per-point term (features and -W_o p_i, bias folded in) plus a per-center
  // term (W_o q_s). fp and q1 are reused to assemble pre1 directly.
  Mat wf, wo;
  split_v1(params.v1, params.c, wf, wo);
  Mat fp, q1;
  gemm(false, true, 1.0, features, wf, 0.0, fp);
  gemm(false, true, -1.0, cache.coords_mat, wo, 1.0, fp);
  for (int i = 0; i < m; ++i) {
    double* row = fp.row(i);
    for (int h = 0; h < params.hidden; ++h) row[h] += params.v1.b[h];
  }
  gemm(false, true, 1.0, cache.centers_mat, wo, 0.0, q1);

  Mat pre1(s_count * m, params.hidden);
  for (int s = 0; s < s_count; ++s) {
    const double* qrow = q1.row(s);
    for (int i = 0; i < m; ++i) {
      double* dst = pre1.row(s * m + i);
      const double* src = fp.row(i);
      for (int h = 0; h < params.hidden; ++h) dst[h] = src[h] + qrow[h];
    }
  }

  cache.r1 = params.vbn1.forward_train(pre1, cache.bn1, bn1_stats);
  relu_inplace(cache.r1);
  Mat pre2 = params.v2.forward(cache.r1);
  cache.r2 = params.vbn2.forward_train(pre2, cache.bn2, bn2_stats);
  relu_inplace(cache.r2);
  cache.r3 = params.v3.forward(cache.r2);

  cache.pooled.resize(s_count, params.c);
  cache.pool_arg.assign(static_cast<size_t>(s_count) * params.c, 0);
  for (int s = 0; s < s_count; ++s)
    maxpool_rows(cache.r3, s * m, (s + 1) * m, cache.pooled.row(s),
                 cache.pool_arg.data() + static_cast<size_t>(s) * params.c);

  cache.box.input = cache.pooled;
  cache.box.hidden = params.box1.forward(cache.pooled);
  relu_inplace(cache.box.hidden);
  return params.box2.forward(cache.box.hidden);
}

Mat evm_train_backward(const Mat& dbox, const EvmBatchCache& cache, EvmParams& params,
                       GradMap& grads) {
  const int m = cache.features.rows;
  const int s_count = cache.pooled.rows;
  if (dbox.rows != s_count || dbox.cols != 4) fail_data("box gradient shape mismatch");

  Mat dh = params.box2.backward(cache.box.hidden, dbox, "evm.box2", grads);
  dh = relu_backward(cache.box.hidden, dh);
  Mat dpooled = params.box1.backward(cache.box.input, dh, "evm.box1", grads);

  Mat dr3(cache.r3.rows, cache.r3.cols);
  for (int s = 0; s < s_count; ++s)
    for (int ch = 0; ch < params.c; ++ch)
      dr3.at(cache.pool_arg[static_cast<size_t>(s) * params.c + ch], ch) += dpooled.at(s, ch);

  Mat g = params.v3.backward(cache.r2, dr3, "evm.v3", grads);
  g = relu_backward(cache.r2, g);
  g = params.vbn2.backward(g, cache.bn2, "evm.vbn2", grads);
  g = params.v2.backward(cache.r1, g, "evm.v2", grads);
  g = relu_backward(cache.r1, g);
  Mat dpre1 = params.vbn1.backward(g, cache.bn1, "evm.vbn1", grads);

  // Undo the layer-1 decomposition: per-point and per-center row sums carry
  // the full (s, i) gradient because each appears once per pairing.
  Mat dfp(m, params.hidden), dq1(s_count, params.hidden);
  std::vector<double> db1(params.hidden, 0.0);
  for (int s = 0; s < s_count; ++s) {
    double* qrow = dq1.row(s);
    for (int i = 0; i < m; ++i) {
      const double* src = dpre1.row(s * m + i);
      double* frow = dfp.row(i);
      for (int h = 0; h < params.hidden; ++h) {
        frow[h] += src[h];
        qrow[h] += src[h];
        db1[h] += src[h];
      }
    }
  }

  Mat gwf, gwo;
  gemm(true, false, 1.0, dfp, cache.features, 0.0, gwf);
  gemm(true, false, 1.0, dq1, cache.centers_mat, 0.0, gwo);
  gemm(true, false, -1.0, dfp, cache.coords_mat, 1.0, gwo);
  Mat gw(params.hidden, params.c + 3);
  for (int r = 0; r < params.hidden; ++r) {
    std::memcpy(gw.row(r), gwf.row(r), sizeof(double) * params.c);
    std::memcpy(gw.row(r) + params.c, gwo.row(r), sizeof(double) * 3);
  }
  accumulate_grad(grads, "evm.v1.W", gw.d.data(), gw.size());
  accumulate_grad(grads, "evm.v1.b", db1.data(), db1.size());

  Mat wf, wo;
  split_v1(params.v1, params.c, wf, wo);
  Mat dfeatures;
  gemm(false, false, 1.0, dfp, wf, 0.0, dfeatures);
  return dfeatures;
}

CombinedLoss combined_loss(const Mat& logits, const Mat& labels, const Mat& pred_bc,
                           const Mat& gt_bc, const std::vector<double>& mask, const Mat& pred_box,
                           const Mat& gt_box, double alpha, double beta, double gamma) {
  if (pred_bc.rows != gt_bc.rows || pred_bc.cols != gt_bc.cols || pred_bc.cols != 9)
    fail_data("box cloud loss expects matching M x 9 matrices");
  if (mask.size() != static_cast<size_t>(pred_bc.rows))
    fail_data("box cloud mask length mismatch");
  if (pred_box.rows != gt_box.rows || pred_box.cols != gt_box.cols || pred_box.cols != 4)
    fail_data("box loss expects matching S x 4 matrices");

  CombinedLoss out;
  LossGrad cla = bce_with_logits(logits, labels);
  out.cla = cla.value;
  out.d_logits = std::move(cla.grad);
  for (double& v : out.d_logits.d) v *= alpha;

  // Masked box-cloud term: only rows the mask selects contribute, normalized
  // by the mask sum so the scale is independent of the on-target count.
  double msum = 0.0;
  for (double e : mask) msum += e;
  out.d_bc.resize(pred_bc.rows, 9);
  if (msum > 0.0) {
    double acc = 0.0;
    for (int i = 0; i < pred_bc.rows; ++i) {
      if (mask[i] == 0.0) continue;
      for (int d = 0; d < 9; ++d) {
        const double r = pred_bc.at(i, d) - gt_bc.at(i, d);
        acc += mask[i] * huber(r);
        out.d_bc.at(i, d) = beta * mask[i] * huber_grad(r) / msum;
      }
    }
    out.bc = acc / msum;
  }

  const int s_count = pred_box.rows;
  if (s_count == 0) fail_data("box loss needs at least one sampled center");
  out.d_box.resize(s_count, 4);
  double acc = 0.0;
  for (int s = 0; s < s_count; ++s)
    for (int j = 0; j < 4; ++j) {
      const double r = pred_box.at(s, j) - gt_box.at(s, j);
      acc += huber(r);
      out.d_box.at(s, j) = gamma * huber_grad(r) / s_count;
    }
  out.bbox = acc / s_count;

  out.total = alpha * out.cla + beta * out.bc + gamma * out.bbox;
  return out;
}

}  // namespace dmt
