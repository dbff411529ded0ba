#include "dmt/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dmt {

double xavier_limit(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

void tune_allocator_for_training() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

void Dense::init(Rng& rng) {
  const double lim = xavier_limit(in(), out());
  for (double& w : W.d) w = rng.uniform(-lim, lim);
  std::fill(b.begin(), b.end(), 0.0);
}

Mat Dense::forward(const Mat& x) const {
  if (x.cols != in()) fail_numeric("dense: input width mismatch");
  Mat y;
  gemm(false, true, 1.0, x, W, 0.0, y);
  for (int r = 0; r < y.rows; ++r) {
    double* row = y.row(r);
    for (int c = 0; c < y.cols; ++c) row[c] += b[c];
  }
  return y;
}

Mat Dense::backward(const Mat& x, const Mat& gy, const std::string& prefix, GradMap& grads) const {
  if (gy.rows != x.rows || gy.cols != out()) fail_numeric("dense: grad shape mismatch");
  Mat gW(out(), in());
  gemm(true, false, 1.0, gy, x, 0.0, gW);
  std::vector<double> gb(out(), 0.0);
  for (int r = 0; r < gy.rows; ++r) {
    const double* row = gy.row(r);
    for (int c = 0; c < gy.cols; ++c) gb[c] += row[c];
  }
  accumulate_grad(grads, prefix + ".W", gW.d.data(), gW.size());
  accumulate_grad(grads, prefix + ".b", gb.data(), gb.size());
  Mat gx;
  gemm(false, false, 1.0, gy, W, 0.0, gx);
  return gx;
}

void Dense::collect(const std::string& prefix, std::vector<TensorRef>& out_refs) {
  out_refs.push_back({prefix + ".W", W.d.data(), {W.rows, W.cols}, W.size()});
  out_refs.push_back({prefix + ".b", b.data(), {static_cast<int>(b.size())}, b.size()});
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

Mat BatchNorm::forward_train(const Mat& x, Cache& cache, BnStats* deferred) {
  if (x.cols != c) fail_numeric("batchnorm: channel mismatch");
  const int n = x.rows;
  if (n < 2) fail_usage("batch too small for batch norm");

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (int r = 0; r < n; ++r) {
    const double* row = x.row(r);
    for (int j = 0; j < c; ++j) mean[j] += row[j];
  }
  for (int j = 0; j < c; ++j) mean[j] /= n;
  for (int r = 0; r < n; ++r) {
    const double* row = x.row(r);
    for (int j = 0; j < c; ++j) {
      const double d = row[j] - mean[j];
      var[j] += d * d;
    }
  }
  for (int j = 0; j < c; ++j) var[j] /= n;  // biased, used for normalization

  cache.n = n;
  cache.inv_std.resize(c);
  for (int j = 0; j < c; ++j) cache.inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  cache.xhat.resize(n, c);
  Mat y(n, c);
  for (int r = 0; r < n; ++r) {
    const double* row = x.row(r);
    double* xh = cache.xhat.row(r);
    double* yr = y.row(r);
    for (int j = 0; j < c; ++j) {
      xh[j] = (row[j] - mean[j]) * cache.inv_std[j];
      yr[j] = gamma[j] * xh[j] + beta[j];
    }
  }

  BnStats stats;
  stats.mean = mean;
  stats.var_unbiased.resize(c);
  const double corr = n > 1 ? static_cast<double>(n) / (n - 1) : 1.0;
  for (int j = 0; j < c; ++j) stats.var_unbiased[j] = var[j] * corr;
  if (deferred)
    *deferred = std::move(stats);
  else
    apply_stats(stats);
  return y;
}

void BatchNorm::apply_stats(const BnStats& s) {
  for (int j = 0; j < c; ++j) {
    run_mean[j] = (1.0 - momentum) * run_mean[j] + momentum * s.mean[j];
    run_var[j] = (1.0 - momentum) * run_var[j] + momentum * s.var_unbiased[j];
  }
}

Mat BatchNorm::forward_eval(const Mat& x) const {
  if (x.cols != c) fail_numeric("batchnorm: channel mismatch");
  Mat y(x.rows, c);
  std::vector<double> inv_std(c);
  for (int j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(run_var[j] + eps);
  for (int r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    double* yr = y.row(r);
    for (int j = 0; j < c; ++j) yr[j] = gamma[j] * (row[j] - run_mean[j]) * inv_std[j] + beta[j];
  }
  return y;
}

Mat BatchNorm::backward(const Mat& gy, const Cache& cache, const std::string& prefix,
                        GradMap& grads) const {
  const int n = cache.n;
  std::vector<double> ggamma(c, 0.0), gbeta(c, 0.0), sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0);
  for (int r = 0; r < n; ++r) {
    const double* gr = gy.row(r);
    const double* xh = cache.xhat.row(r);
    for (int j = 0; j < c; ++j) {
      gbeta[j] += gr[j];
      ggamma[j] += gr[j] * xh[j];
      const double dxhat = gr[j] * gamma[j];
      sum_dxhat[j] += dxhat;
      sum_dxhat_xhat[j] += dxhat * xh[j];
    }
  }
  Mat gx(n, c);
  const double inv_n = 1.0 / n;
  for (int r = 0; r < n; ++r) {
    const double* gr = gy.row(r);
    const double* xh = cache.xhat.row(r);
    double* gxr = gx.row(r);
    for (int j = 0; j < c; ++j) {
      const double dxhat = gr[j] * gamma[j];
      gxr[j] = cache.inv_std[j] * (dxhat - inv_n * sum_dxhat[j] - inv_n * xh[j] * sum_dxhat_xhat[j]);
    }
  }
  accumulate_grad(grads, prefix + ".gamma", ggamma.data(), ggamma.size());
  accumulate_grad(grads, prefix + ".beta", gbeta.data(), gbeta.size());
  return gx;
}

void BatchNorm::collect(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + ".gamma", gamma.data(), {c}, gamma.size()});
  out.push_back({prefix + ".beta", beta.data(), {c}, beta.size()});
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

void relu_inplace(Mat& x) {
  for (double& v : x.d) v = v > 0.0 ? v : 0.0;
}

Mat relu_backward(const Mat& y, const Mat& gy) {
  Mat gx(gy.rows, gy.cols);
  for (size_t i = 0; i < gy.d.size(); ++i) gx.d[i] = y.d[i] > 0.0 ? gy.d[i] : 0.0;
  return gx;
}

void sigmoid_inplace(Mat& x) {
  // vectorized, stable for both signs: exp(-|v|) never overflows
  Eigen::Map<Eigen::ArrayXd> a(x.d.data(), static_cast<Eigen::Index>(x.d.size()));
  Eigen::ArrayXd e = (-a.abs()).exp();
  a = (a >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
}

Mat sigmoid_backward(const Mat& y, const Mat& gy) {
  Mat gx(gy.rows, gy.cols);
  for (size_t i = 0; i < gy.d.size(); ++i) gx.d[i] = gy.d[i] * y.d[i] * (1.0 - y.d[i]);
  return gx;
}

void tanh_inplace(Mat& x) {
  // tanh(v) = sign(v) * (1 - 2 / (exp(2|v|) + 1)); exp sees only non-negative
  // arguments, so the identity is overflow-safe and uses the packet exp path.
  Eigen::Map<Eigen::ArrayXd> a(x.d.data(), static_cast<Eigen::Index>(x.d.size()));
  Eigen::ArrayXd t = 1.0 - 2.0 / ((2.0 * a.abs()).exp() + 1.0);
  a = (a >= 0.0).select(t, -t);
}

Mat tanh_backward(const Mat& y, const Mat& gy) {
  Mat gx(gy.rows, gy.cols);
  for (size_t i = 0; i < gy.d.size(); ++i) gx.d[i] = gy.d[i] * (1.0 - y.d[i] * y.d[i]);
  return gx;
}

// ---------------------------------------------------------------------------
// Set max-pool
// ---------------------------------------------------------------------------

void maxpool_rows(const Mat& x, int r0, int r1, double* out, int* argmax) {
  for (int j = 0; j < x.cols; ++j) {
    out[j] = x.at(r0, j);
    argmax[j] = r0;
  }
  for (int r = r0 + 1; r < r1; ++r) {
    const double* row = x.row(r);
    for (int j = 0; j < x.cols; ++j) {
      if (row[j] > out[j]) {  // strict: ties keep the lowest row index
        out[j] = row[j];
        argmax[j] = r;
      }
    }
  }
}

void maxpool_set(const Mat& x, std::vector<double>& out, std::vector<int>& argmax) {
  if (x.rows < 1) fail_numeric("maxpool over empty set");
  out.resize(x.cols);
  argmax.resize(x.cols);
  maxpool_rows(x, 0, x.rows, out.data(), argmax.data());
}

void maxpool_set_backward(const std::vector<double>& gout, const std::vector<int>& argmax, Mat& gx) {
  for (size_t j = 0; j < gout.size(); ++j) gx.at(argmax[j], static_cast<int>(j)) += gout[j];
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double huber(double r) {
  const double a = std::abs(r);
  return a < 1.0 ? 0.5 * r * r : a - 0.5;
}

double huber_grad(double r) { return r < -1.0 ? -1.0 : (r > 1.0 ? 1.0 : r); }

LossGrad bce_with_logits(const Mat& logits, const Mat& labels) {
  if (logits.rows != labels.rows || logits.cols != labels.cols)
    fail_numeric("bce: shape mismatch");
  const double n = static_cast<double>(logits.size());
  LossGrad out;
  out.grad.resize(logits.rows, logits.cols);
  double total = 0.0;
  for (size_t i = 0; i < logits.d.size(); ++i) {
    const double z = logits.d[i], y = labels.d[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.grad.d[i] = (sig - y) / n;
  }
  out.value = total / n;
  return out;
}

LossGrad smooth_l1(const Mat& pred, const Mat& target) {
  if (pred.rows != target.rows || pred.cols != target.cols)
    fail_numeric("smooth_l1: shape mismatch");
  const double n = static_cast<double>(pred.size());
  LossGrad out;
  out.grad.resize(pred.rows, pred.cols);
  double total = 0.0;
  for (size_t i = 0; i < pred.d.size(); ++i) {
    const double r = pred.d[i] - target.d[i];
    total += huber(r);
    out.grad.d[i] = huber_grad(r) / n;
  }
  out.value = total / n;
  return out;
}

LossGrad mse_rows(const Mat& pred, const Mat& target) {
  if (pred.rows != target.rows || pred.cols != target.cols) fail_numeric("mse: shape mismatch");
  const double n = static_cast<double>(pred.rows);
  LossGrad out;
  out.grad.resize(pred.rows, pred.cols);
  double total = 0.0;
  for (size_t i = 0; i < pred.d.size(); ++i) {
    const double r = pred.d[i] - target.d[i];
    total += r * r;
    out.grad.d[i] = 2.0 * r / n;
  }
  out.value = total / n;
  return out;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

LstmParams::LstmParams(int input, int h)
    : in(input), hidden(h), Wi(h, input + h), Wf(h, input + h), Wg(h, input + h), Wo(h, input + h),
      bi(h, 0.0), bf(h, 0.0), bg(h, 0.0), bo(h, 0.0) {}

void LstmParams::init(Rng& rng) {
  const double lim = xavier_limit(in + hidden, hidden);
  for (Mat* w : {&Wi, &Wf, &Wg, &Wo})
    for (double& v : w->d) v = rng.uniform(-lim, lim);
  std::fill(bi.begin(), bi.end(), 0.0);
  std::fill(bf.begin(), bf.end(), 1.0);  // forget-gate bias +1 keeps early memory open
  std::fill(bg.begin(), bg.end(), 0.0);
  std::fill(bo.begin(), bo.end(), 0.0);
}

void LstmParams::collect(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + ".Wi", Wi.d.data(), {Wi.rows, Wi.cols}, Wi.size()});
  out.push_back({prefix + ".Wf", Wf.d.data(), {Wf.rows, Wf.cols}, Wf.size()});
  out.push_back({prefix + ".Wg", Wg.d.data(), {Wg.rows, Wg.cols}, Wg.size()});
  out.push_back({prefix + ".Wo", Wo.d.data(), {Wo.rows, Wo.cols}, Wo.size()});
  out.push_back({prefix + ".bi", bi.data(), {hidden}, bi.size()});
  out.push_back({prefix + ".bf", bf.data(), {hidden}, bf.size()});
  out.push_back({prefix + ".bg", bg.data(), {hidden}, bg.size()});
  out.push_back({prefix + ".bo", bo.data(), {hidden}, bo.size()});
}

namespace {

// [Wi; Wf; Wg; Wo] stacked row-wise into one (4H x K) matrix so the four gate
// products collapse into a single gemm per step.
Mat stack_gate_weights(const LstmParams& p) {
  const int H = p.hidden, K = p.in + p.hidden;
  Mat w_all(4 * H, K);
  const Mat* ws[4] = {&p.Wi, &p.Wf, &p.Wg, &p.Wo};
  for (int s = 0; s < 4; ++s)
    std::memcpy(w_all.row(s * H), ws[s]->d.data(), sizeof(double) * H * K);
  return w_all;
}

}  // namespace

std::vector<Mat> lstm_forward_steps(const LstmParams& p, const std::vector<Mat>& xs,
                                    LstmCache& cache) {
  const int T = static_cast<int>(xs.size());
  if (T == 0) fail_numeric("lstm: empty sequence");
  const int B = xs[0].rows, H = p.hidden;

  cache.xh.resize(T);
  cache.i.resize(T);
  cache.f.resize(T);
  cache.g.resize(T);
  cache.o.resize(T);
  cache.c.resize(T);
  cache.tanh_c.resize(T);

  const Mat w_all = stack_gate_weights(p);
  const std::vector<double>* bs[4] = {&p.bi, &p.bf, &p.bg, &p.bo};

  Mat pre;  // B x 4H scratch, shared across steps
  std::vector<Mat> hs(T);
  for (int t = 0; t < T; ++t) {
    if (xs[t].cols != p.in || xs[t].rows != B) fail_numeric("lstm: input shape mismatch");
    Mat& xh = cache.xh[t];
    xh.resize(B, p.in + H);
    const Mat* h_prev = t > 0 ? &hs[t - 1] : nullptr;
    for (int r = 0; r < B; ++r) {
      double* row = xh.row(r);
      const double* xr = xs[t].row(r);
      for (int j = 0; j < p.in; ++j) row[j] = xr[j];
      if (h_prev) {
        std::memcpy(row + p.in, h_prev->row(r), sizeof(double) * H);
      } else {
        std::memset(row + p.in, 0, sizeof(double) * H);
      }
    }
    gemm(false, true, 1.0, xh, w_all, 0.0, pre);

    Mat* gates[4] = {&cache.i[t], &cache.f[t], &cache.g[t], &cache.o[t]};
    for (int s = 0; s < 4; ++s) {
      Mat& gm = *gates[s];
      gm.resize(B, H);
      const std::vector<double>& b = *bs[s];
      for (int r = 0; r < B; ++r) {
        const double* src = pre.row(r) + s * H;
        double* dst = gm.row(r);
        for (int j = 0; j < H; ++j) dst[j] = src[j] + b[j];
      }
      if (s == 2)
        tanh_inplace(gm);
      else
        sigmoid_inplace(gm);
    }

    Mat& c = cache.c[t];
    c.resize(B, H);
    const double* cp = t > 0 ? cache.c[t - 1].d.data() : nullptr;
    for (size_t k = 0; k < c.d.size(); ++k)
      c.d[k] = (cp ? cache.f[t].d[k] * cp[k] : 0.0) + cache.i[t].d[k] * cache.g[t].d[k];
    Mat& tc = cache.tanh_c[t];
    tc.resize(B, H);
    std::memcpy(tc.d.data(), c.d.data(), sizeof(double) * c.d.size());
    tanh_inplace(tc);
    Mat& h = hs[t];
    h.resize(B, H);
    for (size_t k = 0; k < h.d.size(); ++k) h.d[k] = cache.o[t].d[k] * tc.d[k];
  }
  return hs;
}

void lstm_bptt(const LstmParams& p, const LstmCache& cache, const std::vector<Mat>& ghs,
               const std::string& prefix, GradMap& grads) {
  const int T = static_cast<int>(cache.xh.size());
  const int B = cache.xh[0].rows, H = p.hidden, K = p.in + H;

  const Mat w_all = stack_gate_weights(p);
  Mat gw_all(4 * H, K);
  std::vector<double> gb_all(4 * H, 0.0);

  // dgates column blocks follow the [i, f, g, o] stacking of w_all.
  Mat dh(B, H), dc(B, H), dgates(B, 4 * H), dxh;
  for (int t = T - 1; t >= 0; --t) {
    for (size_t k = 0; k < dh.d.size(); ++k) dh.d[k] += ghs[t].d[k];

    const Mat& i = cache.i[t];
    const Mat& f = cache.f[t];
    const Mat& g = cache.g[t];
    const Mat& o = cache.o[t];
    const Mat& tc = cache.tanh_c[t];
    const double* cp = t > 0 ? cache.c[t - 1].d.data() : nullptr;
    for (int r = 0; r < B; ++r) {
      double* dgr = dgates.row(r);
      const size_t base = static_cast<size_t>(r) * H;
      for (int j = 0; j < H; ++j) {
        const size_t k = base + j;
        const double dct = dh.d[k] * o.d[k] * (1.0 - tc.d[k] * tc.d[k]) + dc.d[k];
        dgr[j] = dct * g.d[k] * i.d[k] * (1.0 - i.d[k]);
        dgr[H + j] = dct * (cp ? cp[k] : 0.0) * f.d[k] * (1.0 - f.d[k]);
        dgr[2 * H + j] = dct * i.d[k] * (1.0 - g.d[k] * g.d[k]);
        dgr[3 * H + j] = dh.d[k] * tc.d[k] * o.d[k] * (1.0 - o.d[k]);
        dc.d[k] = dct * f.d[k];
      }
    }

    gemm(true, false, 1.0, dgates, cache.xh[t], 1.0, gw_all);
    for (int r = 0; r < B; ++r) {
      const double* dgr = dgates.row(r);
      for (int j = 0; j < 4 * H; ++j) gb_all[j] += dgr[j];
    }

    // dxh = dgates * w_all; only the hidden slice feeds the next dh.
    gemm(false, false, 1.0, dgates, w_all, 0.0, dxh);
    for (int r = 0; r < B; ++r) {
      const double* src = dxh.row(r) + p.in;
      double* dst = dh.row(r);
      for (int j = 0; j < H; ++j) dst[j] = src[j];
    }
  }

  const char* wnames[4] = {".Wi", ".Wf", ".Wg", ".Wo"};
  const char* bnames[4] = {".bi", ".bf", ".bg", ".bo"};
  for (int s = 0; s < 4; ++s) {
    accumulate_grad(grads, prefix + wnames[s], gw_all.row(s * H), static_cast<size_t>(H) * K);
    accumulate_grad(grads, prefix + bnames[s], gb_all.data() + s * H, H);
  }
}

Mat lstm_forward(const LstmParams& p, const Mat& seq) {
  std::vector<Mat> xs(seq.rows);
  for (int t = 0; t < seq.rows; ++t) {
    xs[t].resize(1, seq.cols);
    for (int j = 0; j < seq.cols; ++j) xs[t].at(0, j) = seq.at(t, j);
  }
  LstmCache cache;
  const std::vector<Mat> hs = lstm_forward_steps(p, xs, cache);
  Mat out(seq.rows, p.hidden);
  for (int t = 0; t < seq.rows; ++t)
    for (int j = 0; j < p.hidden; ++j) out.at(t, j) = hs[t].at(0, j);
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void AdamState::step(std::vector<TensorRef>& params, const GradMap& grads, double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (TensorRef& ref : params) {
    auto it = grads.find(ref.name);
    if (it == grads.end()) continue;  // parameter saw no gradient this step
    const std::vector<double>& g = it->second;
    if (g.size() != ref.count) fail_numeric("adam: gradient size mismatch for " + ref.name);
    auto& [m, v] = moments[ref.name];
    if (m.empty()) {
      m.assign(ref.count, 0.0);
      v.assign(ref.count, 0.0);
    }
    for (size_t k = 0; k < ref.count; ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      ref.p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace dmt
