#include "dmt/nn.hpp"

#include <cmath>

#include "doctest.h"
#include "dmt/gradcheck.hpp"

using namespace dmt;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.d) v = rng.uniform(-scale, scale);
  return m;
}

// Projection loss: sum(proj .* y). Turns a Jacobian check into a scalar check.
double project(const Mat& y, const Mat& proj) {
  double s = 0.0;
  for (size_t i = 0; i < y.d.size(); ++i) s += y.d[i] * proj.d[i];
  return s;
}

TensorRef ref_of(const std::string& name, Mat& m) {
  return {name, m.d.data(), {m.rows, m.cols}, m.size()};
}

bool all_finite(const Mat& m) {
  for (double v : m.d)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TEST_CASE("dense: zero and identity parameter cases") {
  Dense d(3, 3);
  Mat x(2, 3);
  x.at(0, 0) = 1.0;
  x.at(1, 2) = -2.5;
  Mat y = d.forward(x);
  for (double v : y.d) CHECK(v == 0.0);

  for (int i = 0; i < 3; ++i) d.W.at(i, i) = 1.0;
  y = d.forward(x);
  for (size_t i = 0; i < x.d.size(); ++i) CHECK(y.d[i] == doctest::Approx(x.d[i]));
}

TEST_CASE("dense: gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(100, seed));
    Dense d(4, 3);
    d.init(rng);
    Mat x = random_mat(5, 4, rng);
    const Mat proj = random_mat(5, 3, rng);

    std::vector<TensorRef> params;
    d.collect("dense", params);
    params.push_back(ref_of("x", x));

    auto eval = [&](GradMap* g) {
      Mat y = d.forward(x);
      if (g) {
        Mat gx = d.backward(x, proj, "dense", *g);
        accumulate_grad(*g, "x", gx.d.data(), gx.size());
      }
      return project(y, proj);
    };
    CHECK(fd_check(params, eval, 1e-6, 64, seed) <= 1e-5);
  }
}

TEST_CASE("batchnorm: constant channel gives beta; standardized batch passes through") {
  BatchNorm bn(2);
  bn.beta = {0.25, -0.5};
  Mat x(4, 2);
  for (int r = 0; r < 4; ++r) {
    x.at(r, 0) = 3.0;
    x.at(r, 1) = -1.0;
  }
  BatchNorm::Cache cache;
  const Mat y = bn.forward_train(x, cache);
  for (int r = 0; r < 4; ++r) {
    CHECK(y.at(r, 0) == doctest::Approx(0.25));
    CHECK(y.at(r, 1) == doctest::Approx(-0.5));
  }

  BatchNorm bn2(1);
  Mat z(4, 1);
  z.at(0, 0) = -1.3416407864998738;  // standardized {-3,-1,1,3}/sqrt(5)
  z.at(1, 0) = -0.4472135954999579;
  z.at(2, 0) = 0.4472135954999579;
  z.at(3, 0) = 1.3416407864998738;
  BatchNorm::Cache c2;
  const Mat out = bn2.forward_train(z, c2);
  for (int r = 0; r < 4; ++r) CHECK(out.at(r, 0) == doctest::Approx(z.at(r, 0)).epsilon(1e-4));
}

TEST_CASE("batchnorm: batch of one is rejected in training mode") {
  BatchNorm bn(3);
  Mat x(1, 3);
  BatchNorm::Cache cache;
  CHECK_THROWS_AS(bn.forward_train(x, cache), DmtError);
}

TEST_CASE("batchnorm: running stats update with momentum 0.1") {
  BatchNorm bn(1);
  Mat x(2, 1);
  x.at(0, 0) = 1.0;
  x.at(1, 0) = 3.0;  // mean 2, biased var 1, unbiased var 2
  BatchNorm::Cache cache;
  bn.forward_train(x, cache);
  CHECK(bn.run_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
  CHECK(bn.run_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));
}

TEST_CASE("batchnorm: inference mode is bitwise deterministic") {
  Rng rng(7);
  BatchNorm bn(8);
  for (int j = 0; j < 8; ++j) {
    bn.gamma[j] = rng.uniform(0.5, 2.0);
    bn.beta[j] = rng.uniform(-1, 1);
    bn.run_mean[j] = rng.uniform(-1, 1);
    bn.run_var[j] = rng.uniform(0.1, 2.0);
  }
  const Mat x = random_mat(16, 8, rng);
  const Mat a = bn.forward_eval(x);
  const Mat b = bn.forward_eval(x);
  for (size_t i = 0; i < a.d.size(); ++i) CHECK(a.d[i] == b.d[i]);
}

TEST_CASE("batchnorm: gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(200, seed));
    BatchNorm bn(3);
    for (int j = 0; j < 3; ++j) {
      bn.gamma[j] = rng.uniform(0.5, 1.5);
      bn.beta[j] = rng.uniform(-0.5, 0.5);
    }
    Mat x = random_mat(6, 3, rng);
    const Mat proj = random_mat(6, 3, rng);

    std::vector<TensorRef> params;
    bn.collect("bn", params);
    params.push_back(ref_of("x", x));

    auto eval = [&](GradMap* g) {
      BatchNorm::Cache cache;
      BnStats stats;
      Mat y = bn.forward_train(x, cache, &stats);
      if (g) {
        Mat gx = bn.backward(proj, cache, "bn", *g);
        accumulate_grad(*g, "x", gx.d.data(), gx.size());
      }
      return project(y, proj);
    };
    CHECK(fd_check(params, eval, 1e-6, 32, seed) <= 1e-5);
  }
}

TEST_CASE("activations: point values and gradient checks") {
  Mat x(1, 2);
  x.at(0, 0) = -1.0;
  x.at(0, 1) = 2.0;
  Mat r = x;
  relu_inplace(r);
  CHECK(r.at(0, 0) == 0.0);
  CHECK(r.at(0, 1) == 2.0);

  Mat s(1, 1);
  sigmoid_inplace(s);
  CHECK(s.at(0, 0) == doctest::Approx(0.5));

  // tanh gradient vs central differences, tight tolerance
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    const double v = rng.uniform(-2, 2);
    Mat in(1, 1);
    in.at(0, 0) = v;
    Mat y = in;
    tanh_inplace(y);
    Mat gy(1, 1);
    gy.at(0, 0) = 1.0;
    const double analytic = tanh_backward(y, gy).at(0, 0);
    const double h = 1e-6;
    const double fd = (std::tanh(v + h) - std::tanh(v - h)) / (2 * h);
    CHECK(std::abs(analytic - fd) <= 1e-7);
  }
}

TEST_CASE("activations: sigmoid/relu gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(300, seed));
    Mat x = random_mat(4, 5, rng, 2.0);
    const Mat proj = random_mat(4, 5, rng);
    std::vector<TensorRef> params = {ref_of("x", x)};

    auto eval_sig = [&](GradMap* g) {
      Mat y = x;
      sigmoid_inplace(y);
      if (g) {
        Mat gx = sigmoid_backward(y, proj);
        accumulate_grad(*g, "x", gx.d.data(), gx.size());
      }
      return project(y, proj);
    };
    CHECK(fd_check(params, eval_sig, 1e-6, 32, seed) <= 1e-5);

    auto eval_relu = [&](GradMap* g) {
      Mat y = x;
      relu_inplace(y);
      if (g) {
        Mat gx = relu_backward(y, proj);
        accumulate_grad(*g, "x", gx.d.data(), gx.size());
      }
      return project(y, proj);
    };
    CHECK(fd_check(params, eval_relu, 1e-6, 32, seed) <= 1e-4);
  }
}

TEST_CASE("maxpool_set: single row, permutation invariance, empty error") {
  Mat x(1, 3);
  x.at(0, 0) = 4;
  x.at(0, 1) = -2;
  x.at(0, 2) = 0.5;
  std::vector<double> out;
  std::vector<int> argmax;
  maxpool_set(x, out, argmax);
  CHECK(out[0] == 4);
  CHECK(out[1] == -2);
  CHECK(out[2] == 0.5);

  Rng rng(3);
  Mat a = random_mat(6, 4, rng);
  Mat b(6, 4);
  const int perm[6] = {3, 0, 5, 1, 4, 2};
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 4; ++c) b.at(r, c) = a.at(perm[r], c);
  std::vector<double> oa, ob;
  std::vector<int> ia, ib;
  maxpool_set(a, oa, ia);
  maxpool_set(b, ob, ib);
  for (int c = 0; c < 4; ++c) CHECK(oa[c] == ob[c]);

  Mat empty(0, 4);
  CHECK_THROWS_AS(maxpool_set(empty, oa, ia), DmtError);
}

TEST_CASE("maxpool_set: gradient routes to argmax rows") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(400, seed));
    Mat x = random_mat(5, 3, rng);  // continuous random: ties have measure zero
    Mat proj = random_mat(1, 3, rng);
    std::vector<TensorRef> params = {ref_of("x", x)};

    auto eval = [&](GradMap* g) {
      std::vector<double> out;
      std::vector<int> argmax;
      maxpool_set(x, out, argmax);
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += out[c] * proj.at(0, c);
      if (g) {
        Mat gx(5, 3);
        std::vector<double> gout(3);
        for (int c = 0; c < 3; ++c) gout[c] = proj.at(0, c);
        maxpool_set_backward(gout, argmax, gx);
        accumulate_grad(*g, "x", gx.d.data(), gx.size());
      }
      return s;
    };
    CHECK(fd_check(params, eval, 1e-6, 16, seed) <= 1e-5);
  }
}

TEST_CASE("losses: pinned values") {
  Mat p(1, 1), t(1, 1);
  p.at(0, 0) = 1.0;
  t.at(0, 0) = 0.0;
  CHECK(smooth_l1(p, t).value == doctest::Approx(0.5));  // boundary of the two branches

  Mat logit(1, 1), label(1, 1);
  logit.at(0, 0) = 0.0;
  label.at(0, 0) = 1.0;
  CHECK(bce_with_logits(logit, label).value == doctest::Approx(std::log(2.0)));

  Mat a(2, 3), b(2, 3);
  a.at(0, 0) = 1.0;
  a.at(1, 2) = -2.0;
  const double expect = (1.0 + 4.0) / 2.0;  // mean over rows of squared row norms
  CHECK(mse_rows(a, b).value == doctest::Approx(expect));
}

TEST_CASE("losses: gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(500, seed));
    Mat pred = random_mat(4, 3, rng, 2.0);
    Mat target = random_mat(4, 3, rng, 2.0);
    Mat labels(4, 3);
    for (double& v : labels.d) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    std::vector<TensorRef> params = {ref_of("pred", pred)};

    auto eval_bce = [&](GradMap* g) {
      LossGrad lg = bce_with_logits(pred, labels);
      if (g) accumulate_grad(*g, "pred", lg.grad.d.data(), lg.grad.size());
      return lg.value;
    };
    CHECK(fd_check(params, eval_bce, 1e-6, 32, seed) <= 1e-5);

    auto eval_sl1 = [&](GradMap* g) {
      LossGrad lg = smooth_l1(pred, target);
      if (g) accumulate_grad(*g, "pred", lg.grad.d.data(), lg.grad.size());
      return lg.value;
    };
    CHECK(fd_check(params, eval_sl1, 1e-6, 32, seed) <= 1e-5);

    auto eval_mse = [&](GradMap* g) {
      LossGrad lg = mse_rows(pred, target);
      if (g) accumulate_grad(*g, "pred", lg.grad.d.data(), lg.grad.size());
      return lg.value;
    };
    CHECK(fd_check(params, eval_mse, 1e-6, 32, seed) <= 1e-5);
  }
}

TEST_CASE("lstm: all-zero parameters give zero hidden states") {
  LstmParams p(3, 4);
  Mat seq(5, 3);
  Rng rng(9);
  for (double& v : seq.d) v = rng.uniform(-1, 1);
  const Mat h = lstm_forward(p, seq);
  for (double v : h.d) CHECK(v == 0.0);
}

TEST_CASE("lstm: empty sequence is rejected") {
  LstmParams p(3, 4);
  LstmCache cache;
  std::vector<Mat> xs;
  CHECK_THROWS_AS(lstm_forward_steps(p, xs, cache), DmtError);
}

TEST_CASE("lstm: single-step gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(600, seed));
    LstmParams p(3, 4);
    p.init(rng);
    std::vector<Mat> xs = {random_mat(2, 3, rng)};
    const Mat proj = random_mat(2, 4, rng);

    std::vector<TensorRef> params;
    p.collect("lstm", params);

    auto eval = [&](GradMap* g) {
      LstmCache cache;
      const std::vector<Mat> hs = lstm_forward_steps(p, xs, cache);
      if (g) lstm_bptt(p, cache, {proj}, "lstm", *g);
      return project(hs[0], proj);
    };
    CHECK(fd_check(params, eval, 1e-6, 24, seed) <= 1e-5);
  }
}

TEST_CASE("lstm: 10-step BPTT matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(700, seed));
    LstmParams p(3, 5);
    p.init(rng);
    std::vector<Mat> xs;
    std::vector<Mat> projs;
    for (int t = 0; t < 10; ++t) {
      xs.push_back(random_mat(2, 3, rng));
      projs.push_back(random_mat(2, 5, rng));
    }

    std::vector<TensorRef> params;
    p.collect("lstm", params);

    auto eval = [&](GradMap* g) {
      LstmCache cache;
      const std::vector<Mat> hs = lstm_forward_steps(p, xs, cache);
      if (g) lstm_bptt(p, cache, projs, "lstm", *g);
      double s = 0.0;
      for (int t = 0; t < 10; ++t) s += project(hs[t], projs[t]);
      return s;
    };
    CHECK(fd_check(params, eval, 1e-6, 20, seed) <= 1e-4);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<double> w = {1.0, -2.0, 3.0};
  std::vector<TensorRef> params = {{"w", w.data(), {3}, 3}};
  GradMap g;
  g["w"] = {0.0, 0.0, 0.0};
  AdamState adam;
  adam.step(params, g, 1e-2);
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(-2.0));
  CHECK(w[2] == doctest::Approx(3.0));
}

TEST_CASE("adam: first-step magnitude is about lr") {
  std::vector<double> w = {0.0};
  std::vector<TensorRef> params = {{"w", w.data(), {1}, 1}};
  GradMap g;
  g["w"] = {0.37};
  AdamState adam;
  adam.step(params, g, 1e-2);
  CHECK(std::abs(w[0] + 1e-2) <= 1e-6);  // -lr * g/(|g| + eps) ~ -lr
}

TEST_CASE("adam: converges on a 1-D quadratic") {
  std::vector<double> w = {1.0};
  std::vector<TensorRef> params = {{"w", w.data(), {1}, 1}};
  AdamState adam;
  for (int step = 0; step < 2000; ++step) {
    GradMap g;
    g["w"] = {w[0]};  // f(x) = x^2/2
    adam.step(params, g, 1e-2);
    if (std::abs(w[0]) < 1e-3) break;
  }
  CHECK(std::abs(w[0]) < 1e-3);
}

TEST_CASE("forward passes stay finite on extreme inputs") {
  Rng rng(42);
  Mat x(4, 6);
  for (double& v : x.d) v = rng.uniform() < 0.5 ? 1e3 : -1e3;

  Dense d(6, 5);
  d.init(rng);
  CHECK(all_finite(d.forward(x)));

  BatchNorm bn(6);
  BatchNorm::Cache cache;
  CHECK(all_finite(bn.forward_train(x, cache)));
  CHECK(all_finite(bn.forward_eval(x)));

  Mat s = x;
  sigmoid_inplace(s);
  CHECK(all_finite(s));
  Mat t = x;
  tanh_inplace(t);
  CHECK(all_finite(t));

  Mat labels(4, 6);
  CHECK(std::isfinite(bce_with_logits(x, labels).value));
  CHECK(std::isfinite(smooth_l1(x, labels).value));

  LstmParams lp(6, 4);
  lp.init(rng);
  CHECK(all_finite(lstm_forward(lp, x)));
}
