#include "dmt/motion.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace dmt {

const char* mpm_variant_name(MpmVariant v) {
  switch (v) {
    case MpmVariant::ConstVel: return "constvel";
    case MpmVariant::Linear: return "linear";
    case MpmVariant::Ridge: return "ridge";
    case MpmVariant::Gpr: return "gpr";
    case MpmVariant::RansacRidge: return "ransac";
    case MpmVariant::Lstm: return "lstm";
  }
  fail_usage("unknown mpm variant");
}

MpmVariant parse_mpm_variant(const std::string& name) {
  if (name == "constvel") return MpmVariant::ConstVel;
  if (name == "linear") return MpmVariant::Linear;
  if (name == "ridge") return MpmVariant::Ridge;
  if (name == "gpr") return MpmVariant::Gpr;
  if (name == "ransac") return MpmVariant::RansacRidge;
  if (name == "lstm") return MpmVariant::Lstm;
  fail_usage("unknown mpm variant: " + name);
}

void LstmMotionParams::init(Rng& rng) {
  lstm.init(rng);
  head.init(rng);
}

void LstmMotionParams::collect(std::vector<TensorRef>& out) {
  lstm.collect("lstm", out);
  head.collect("lstm_head", out);
}

void MpmConfig::validate() const {
  if (window < 1) fail_usage("mpm window must be >= 1");
  switch (variant) {
    case MpmVariant::ConstVel:
    case MpmVariant::Linear:
      break;
    case MpmVariant::Ridge:
      if (lambda <= 0.0) fail_usage("ridge lambda must be positive");
      break;
    case MpmVariant::Gpr:
      if (length_scale <= 0.0) fail_usage("gpr length scale must be positive");
      if (noise <= 0.0) fail_usage("gpr noise must be positive");
      break;
    case MpmVariant::RansacRidge:
      if (ransac_iters < 1) fail_usage("ransac iters must be >= 1");
      if (inlier_thresh <= 0.0) fail_usage("ransac inlier threshold must be positive");
      if (lambda <= 0.0) fail_usage("ransac ridge lambda must be positive");
      break;
    case MpmVariant::Lstm:
      if (!lstm) fail_usage("lstm variant needs parameters");
      if (lstm_max_disp <= 0.0) fail_usage("lstm displacement scale must be positive");
      break;
  }
}

namespace {

// Last `window` entries, front-padded by repeating the earliest entry.
std::vector<Vec3> padded_window(const std::vector<Vec3>& history, int window) {
  std::vector<Vec3> out;
  out.reserve(window);
  const int n = static_cast<int>(history.size());
  for (int i = 0; i < window; ++i) {
    const int src = n - window + i;
    out.push_back(history[std::max(src, 0)]);
  }
  return out;
}

Vec3 const_vel(const std::vector<Vec3>& history) {
  const Vec3& last = history.back();
  const Vec3& prev = history.size() >= 2 ? history[history.size() - 2] : history.back();
  return {2.0 * last.x - prev.x, 2.0 * last.y - prev.y, 2.0 * last.z - prev.z};
}

// Per-axis line fit on frame indices 0..n-1 with an unpenalized intercept;
// returns the value extrapolated to index n. Degenerate systems return the
// constant-velocity estimate instead.
bool ridge_extrapolate(const std::vector<Vec3>& w, const std::vector<int>& idx, double lambda,
                       Vec3* out) {
  const int m = static_cast<int>(idx.size());
  double n = m, sx = 0.0, sxx = 0.0;
  for (int i : idx) {
    sx += i;
    sxx += static_cast<double>(i) * i;
  }
  const double det = n * (sxx + lambda) - sx * sx;
  if (!(std::abs(det) > 1e-12)) return false;
  const double t = static_cast<double>(w.size());
  double pred[3];
  for (int axis = 0; axis < 3; ++axis) {
    double sy = 0.0, sxy = 0.0;
    for (int i : idx) {
      const double y = w[i][axis];
      sy += y;
      sxy += i * y;
    }
    const double a = ((sxx + lambda) * sy - sx * sxy) / det;
    const double b = (n * sxy - sx * sy) / det;
    pred[axis] = a + b * t;
  }
  *out = {pred[0], pred[1], pred[2]};
  return out->finite();
}

std::vector<int> all_indices(int n) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

Vec3 gpr_extrapolate(const std::vector<Vec3>& w, double ls, double noise, bool* ok) {
  const int n = static_cast<int>(w.size());
  Eigen::MatrixXd K(n, n);
  Eigen::VectorXd ks(n);
  const double denom = 2.0 * ls * ls;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double d = i - j;
      K(i, j) = std::exp(-d * d / denom);
    }
    K(i, i) += noise * noise;
    const double d = n - i;
    ks(i) = std::exp(-d * d / denom);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  *ok = llt.info() == Eigen::Success;
  if (!*ok) return {};
  // Zero-mean GP on mean-centered residuals: keeps predictions translation
  // equivariant and exact on constant tracks.
  Vec3 mean{0, 0, 0};
  for (const Vec3& p : w) mean += p;
  mean = mean / static_cast<double>(n);
  Eigen::MatrixXd Y(n, 3);
  for (int i = 0; i < n; ++i)
    for (int axis = 0; axis < 3; ++axis) Y(i, axis) = w[i][axis] - mean[axis];
  Eigen::MatrixXd alpha = llt.solve(Y);
  Eigen::RowVector3d pred = ks.transpose() * alpha;
  Vec3 out{mean.x + pred(0), mean.y + pred(1), mean.z + pred(2)};
  *ok = out.finite();
  return out;
}

Vec3 ransac_extrapolate(const std::vector<Vec3>& w, const MpmConfig& cfg, bool* ok) {
  const int n = static_cast<int>(w.size());
  Rng rng(derive_seed(cfg.ransac_seed, tag("ransac")));
  std::vector<int> best;
  for (int it = 0; it < cfg.ransac_iters; ++it) {
    int a = static_cast<int>(rng.uniform_int(0, n - 1));
    int b = static_cast<int>(rng.uniform_int(0, n - 1));
    int c = static_cast<int>(rng.uniform_int(0, n - 1));
    while (b == a) b = static_cast<int>(rng.uniform_int(0, n - 1));
    while (c == a || c == b) c = static_cast<int>(rng.uniform_int(0, n - 1));
    const std::vector<int> sample = {a, b, c};
    // fit on the minimal sample, then collect inliers by 3D residual
    double det_fit[3][2];
    {
      double m = 3, sx = a + b + c,
             sxx = double(a) * a + double(b) * b + double(c) * c;
      const double det = m * (sxx + cfg.lambda) - sx * sx;
      if (!(std::abs(det) > 1e-12)) continue;
      for (int axis = 0; axis < 3; ++axis) {
        double sy = 0.0, sxy = 0.0;
        for (int i : sample) {
          sy += w[i][axis];
          sxy += i * w[i][axis];
        }
        det_fit[axis][0] = ((sxx + cfg.lambda) * sy - sx * sxy) / det;
        det_fit[axis][1] = (m * sxy - sx * sy) / det;
      }
    }
    std::vector<int> inliers;
    for (int i = 0; i < n; ++i) {
      double r2 = 0.0;
      for (int axis = 0; axis < 3; ++axis) {
        const double r = w[i][axis] - (det_fit[axis][0] + det_fit[axis][1] * i);
        r2 += r * r;
      }
      if (std::sqrt(r2) <= cfg.inlier_thresh) inliers.push_back(i);
    }
    if (inliers.size() > best.size()) best = std::move(inliers);
  }
  if (best.size() < 2) {
    *ok = false;
    return {};
  }
  Vec3 out;
  *ok = ridge_extrapolate(w, best, cfg.lambda, &out);
  return out;
}

Vec3 lstm_extrapolate(const std::vector<Vec3>& w, const MpmConfig& cfg) {
  const int t_steps = static_cast<int>(w.size());
  const Vec3& last = w.back();
  Mat seq(t_steps, 3);
  for (int t = 0; t < t_steps; ++t) {
    const Vec3 d = (w[t] - last) / cfg.lstm_max_disp;
    seq.at(t, 0) = d.x;
    seq.at(t, 1) = d.y;
    seq.at(t, 2) = d.z;
  }
  Mat hs = lstm_forward(cfg.lstm->lstm, seq);
  Mat h_last(1, hs.cols);
  for (int j = 0; j < hs.cols; ++j) h_last.at(0, j) = hs.at(t_steps - 1, j);
  Mat disp = cfg.lstm->head.forward(h_last);
  return {last.x + disp.at(0, 0), last.y + disp.at(0, 1), last.z + disp.at(0, 2)};
}

}  // namespace

Vec3 predict_center(const std::vector<Vec3>& history, const MpmConfig& cfg) {
  if (history.empty()) fail_data("empty state history");
  for (const Vec3& p : history)
    if (!p.finite()) fail_data("non-finite state history");
  cfg.validate();

  if (cfg.variant == MpmVariant::ConstVel) return const_vel(history);

  const std::vector<Vec3> w = padded_window(history, cfg.window);
  Vec3 out;
  bool ok = false;
  switch (cfg.variant) {
    case MpmVariant::Linear:
      ok = ridge_extrapolate(w, all_indices(cfg.window), 0.0, &out);
      break;
    case MpmVariant::Ridge:
      ok = ridge_extrapolate(w, all_indices(cfg.window), cfg.lambda, &out);
      break;
    case MpmVariant::Gpr:
      out = gpr_extrapolate(w, cfg.length_scale, cfg.noise, &ok);
      break;
    case MpmVariant::RansacRidge:
      out = ransac_extrapolate(w, cfg, &ok);
      break;
    case MpmVariant::Lstm:
      out = lstm_extrapolate(w, cfg);
      ok = out.finite();
      break;
    default:
      break;
  }
  if (!ok) return const_vel(history);
  return out;
}

LstmTrainResult train_lstm(LstmMotionParams& params,
                           const std::vector<std::vector<Vec3>>& sequences, int epochs, double lr,
                           std::uint64_t seed, int max_windows) {
  constexpr int kWindow = 10;
  struct Pair {
    const std::vector<Vec3>* seq;
    int start;
  };
  std::vector<Pair> pairs;
  for (const auto& seq : sequences)
    for (int s = 0; s + kWindow < static_cast<int>(seq.size()); ++s)
      pairs.push_back({&seq, s});
  if (pairs.empty()) fail_data("insufficient tracklet length");

  if (max_windows > 0 && static_cast<int>(pairs.size()) > max_windows) {
    // uniform subsample without replacement, kept in chronological order
    Rng rng(derive_seed(seed, tag("lstm_windows")));
    std::vector<int> idx(pairs.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (int i = 0; i < max_windows; ++i)
      std::swap(idx[i], idx[rng.uniform_int(i, static_cast<std::int64_t>(idx.size()) - 1)]);
    idx.resize(max_windows);
    std::sort(idx.begin(), idx.end());
    std::vector<Pair> kept;
    kept.reserve(max_windows);
    for (int i : idx) kept.push_back(pairs[i]);
    pairs = std::move(kept);
  }

  const int b = static_cast<int>(pairs.size());
  const double scale = 5.0;
  std::vector<Mat> xs(kWindow, Mat(b, 3));
  Mat targets(b, 3);
  for (int r = 0; r < b; ++r) {
    const auto& seq = *pairs[r].seq;
    const int s = pairs[r].start;
    const Vec3& anchor = seq[s + kWindow - 1];
    for (int t = 0; t < kWindow; ++t) {
      const Vec3 d = (seq[s + t] - anchor) / scale;
      xs[t].at(r, 0) = d.x;
      xs[t].at(r, 1) = d.y;
      xs[t].at(r, 2) = d.z;
    }
    const Vec3 dt = seq[s + kWindow] - anchor;
    targets.at(r, 0) = dt.x;
    targets.at(r, 1) = dt.y;
    targets.at(r, 2) = dt.z;
  }

  tune_allocator_for_training();
  Rng init_rng(derive_seed(seed, tag("lstm_init")));
  params.init(init_rng);
  std::vector<TensorRef> refs;
  params.collect(refs);
  AdamState adam;

  LstmTrainResult result;
  result.window_count = pairs.size();
  result.loss_curve.reserve(epochs);
  const int hidden = params.lstm.hidden;
  LstmCache cache;  // hoisted: epoch buffers are recycled
  std::vector<Mat> ghs(kWindow, Mat(b, hidden));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<Mat> hs = lstm_forward_steps(params.lstm, xs, cache);
    Mat pred = params.head.forward(hs.back());
    LossGrad loss = mse_rows(pred, targets);
    result.loss_curve.push_back(loss.value);

    GradMap grads;
    ghs.back() = params.head.backward(hs.back(), loss.grad, "lstm_head", grads);
    lstm_bptt(params.lstm, cache, ghs, "lstm", grads);
    adam.step(refs, grads, lr);
  }
  return result;
}

}  // namespace dmt
