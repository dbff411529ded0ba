#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmt/matrix.hpp"
#include "dmt/rng.hpp"

namespace dmt {

// ---------------------------------------------------------------------------
// Parameter registry. Every trainable tensor is exposed by (name, pointer,
// shape); Adam state and the weight container key off the names, so names must
// be unique and stable across runs.
// ---------------------------------------------------------------------------

struct TensorRef {
  std::string name;
  double* p = nullptr;
  std::vector<int> shape;
  size_t count = 0;
};

using GradMap = std::map<std::string, std::vector<double>>;

inline void accumulate_grad(GradMap& g, const std::string& name, const double* src, size_t n) {
  auto& v = g[name];
  if (v.empty()) v.assign(n, 0.0);
  for (size_t i = 0; i < n; ++i) v[i] += src[i];
}

inline void merge_grads(GradMap& into, const GradMap& from) {
  for (const auto& [name, v] : from) accumulate_grad(into, name, v.data(), v.size());
}

inline void scale_grads(GradMap& g, double s) {
  for (auto& [name, v] : g)
    for (double& x : v) x *= s;
}

// Uniform Xavier/Glorot limit for a (fan_in, fan_out) pair.
double xavier_limit(int fan_in, int fan_out);

// ---------------------------------------------------------------------------
// Dense layer: y = x * W^T + b, x is batch x in, W is out x in.
// The caller keeps the forward input and hands it back for the backward pass.
// ---------------------------------------------------------------------------

struct Dense {
  Mat W;
  std::vector<double> b;

  Dense() = default;
  Dense(int in, int out) : W(out, in), b(out, 0.0) {}
  int in() const { return W.cols; }
  int out() const { return W.rows; }

  void init(Rng& rng);
  Mat forward(const Mat& x) const;
  // Accumulates dW/db into grads under `prefix` and returns dx.
  Mat backward(const Mat& x, const Mat& gy, const std::string& prefix, GradMap& grads) const;
  void collect(const std::string& prefix, std::vector<TensorRef>& out);
};

// ---------------------------------------------------------------------------
// 1D batch normalization over the row dimension.
// ---------------------------------------------------------------------------

struct BnStats {
  std::vector<double> mean, var_unbiased;
};

struct BatchNorm {
  int c = 0;
  std::vector<double> gamma, beta, run_mean, run_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm() = default;
  explicit BatchNorm(int channels)
      : c(channels), gamma(channels, 1.0), beta(channels, 0.0), run_mean(channels, 0.0),
        run_var(channels, 1.0) {}

  struct Cache {
    Mat xhat;
    std::vector<double> inv_std;
    int n = 0;
  };

  // Training mode: normalizes over the batch (rows) and updates running stats
  // with momentum, unless `deferred` is given, in which case the batch stats
  // are written there and the running stats stay untouched (the trainer folds
  // them in sample order after a parallel section). Throws when rows < 2.
  Mat forward_train(const Mat& x, Cache& cache, BnStats* deferred = nullptr);
  void apply_stats(const BnStats& s);
  // Inference mode: running stats only; bitwise deterministic.
  Mat forward_eval(const Mat& x) const;
  Mat backward(const Mat& gy, const Cache& cache, const std::string& prefix, GradMap& grads) const;
  void collect(const std::string& prefix, std::vector<TensorRef>& out);
};

// ---------------------------------------------------------------------------
// Activations. Backward masks are derived from the forward outputs.
// ---------------------------------------------------------------------------

void relu_inplace(Mat& x);
Mat relu_backward(const Mat& y, const Mat& gy);
void sigmoid_inplace(Mat& x);
Mat sigmoid_backward(const Mat& y, const Mat& gy);
void tanh_inplace(Mat& x);
Mat tanh_backward(const Mat& y, const Mat& gy);

// ---------------------------------------------------------------------------
// Set max-pool over all rows: per-channel max and argmax row. Ties go to the
// lowest row index. Gradient routes to the argmax rows only.
// ---------------------------------------------------------------------------

void maxpool_set(const Mat& x, std::vector<double>& out, std::vector<int>& argmax);
void maxpool_set_backward(const std::vector<double>& gout, const std::vector<int>& argmax, Mat& gx);
// Same pool over the row range [r0, r1); used for grouped/segmented pooling.
void maxpool_rows(const Mat& x, int r0, int r1, double* out, int* argmax);

// ---------------------------------------------------------------------------
// Losses. Values use mean reduction as documented per loss; grads match.
// ---------------------------------------------------------------------------

struct LossGrad {
  double value = 0.0;
  Mat grad;
};

// Numerically stable mean binary cross entropy on logits.
LossGrad bce_with_logits(const Mat& logits, const Mat& labels);
// Elementwise smooth-L1 (transition at 1), mean over all elements.
LossGrad smooth_l1(const Mat& pred, const Mat& target);
// Mean over rows of the squared L2 row residual.
LossGrad mse_rows(const Mat& pred, const Mat& target);

double huber(double r);
double huber_grad(double r);

// ---------------------------------------------------------------------------
// LSTM with backprop through time. One layer; zero initial state; gates in
// the conventional i, f, g, o parametrization.
// ---------------------------------------------------------------------------

struct LstmParams {
  int in = 3, hidden = 50;
  Mat Wi, Wf, Wg, Wo;  // hidden x (in + hidden)
  std::vector<double> bi, bf, bg, bo;

  LstmParams() = default;
  LstmParams(int input, int h);
  void init(Rng& rng);  // Xavier weights, zero biases, forget bias +1
  void collect(const std::string& prefix, std::vector<TensorRef>& out);
};

struct LstmCache {
  // Per time step, batch-major: xh is B x (in+H); gate/cell tensors are B x H.
  std::vector<Mat> xh, i, f, g, o, c, tanh_c;
};

// xs[t] is the B x in input at step t. Returns all hidden states (B x H per
// step) and fills the cache for bptt. Throws on an empty sequence.
std::vector<Mat> lstm_forward_steps(const LstmParams& p, const std::vector<Mat>& xs, LstmCache& cache);

// ghs[t] is dL/dh_t (zero mats allowed). Accumulates parameter grads.
void lstm_bptt(const LstmParams& p, const LstmCache& cache, const std::vector<Mat>& ghs,
               const std::string& prefix, GradMap& grads);

// Single-sequence convenience: seq is T x in, returns T x hidden.
Mat lstm_forward(const LstmParams& p, const Mat& seq);

// ---------------------------------------------------------------------------
// Adam with bias correction. Moment buffers are keyed by tensor name so the
// whole optimizer state can be serialized for exact resume.
// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;

  void step(std::vector<TensorRef>& params, const GradMap& grads, double lr);
};

// Raises the malloc mmap/trim thresholds so the large activation buffers a
// training loop churns through are recycled in user space instead of being
// returned to the kernel every epoch. Idempotent; no-op off glibc.
void tune_allocator_for_training();

}  // namespace dmt
