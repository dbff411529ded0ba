#include <cmath>
#include <vector>

#include "doctest.h"
#include "dmt/motion.hpp"

using namespace dmt;

namespace {

std::vector<Vec3> linear_track(int n, Vec3 start, Vec3 vel) {
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.push_back(start + vel * static_cast<double>(i));
  return out;
}

std::vector<Vec3> shifted(const std::vector<Vec3>& h, const Vec3& v) {
  std::vector<Vec3> out;
  for (const Vec3& p : h) out.push_back(p + v);
  return out;
}

// Test-side ridge oracle: explicit design-matrix normal equations with a 2x2
// inverse, intercept unpenalized, evaluated at index n.
Vec3 ridge_oracle(const std::vector<Vec3>& w, double lambda) {
  const int n = static_cast<int>(w.size());
  double s00 = n, s01 = 0, s11 = lambda;
  for (int i = 0; i < n; ++i) {
    s01 += i;
    s11 += static_cast<double>(i) * i;
  }
  const double det = s00 * s11 - s01 * s01;
  double pred[3];
  for (int axis = 0; axis < 3; ++axis) {
    double r0 = 0, r1 = 0;
    for (int i = 0; i < n; ++i) {
      r0 += w[i][axis];
      r1 += i * w[i][axis];
    }
    const double a = (s11 * r0 - s01 * r1) / det;
    const double b = (-s01 * r0 + s00 * r1) / det;
    pred[axis] = a + b * n;
  }
  return {pred[0], pred[1], pred[2]};
}

// Test-side GPR oracle: build the kernel system and solve it with Gaussian
// elimination with partial pivoting; mean-centered targets.
Vec3 gpr_oracle(const std::vector<Vec3>& w, double ls, double noise) {
  const int n = static_cast<int>(w.size());
  std::vector<std::vector<double>> K(n, std::vector<double>(n));
  std::vector<double> ks(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      K[i][j] = std::exp(-(i - j) * (i - j) / (2.0 * ls * ls)) + (i == j ? noise * noise : 0.0);
    ks[i] = std::exp(-(n - i) * (n - i) / (2.0 * ls * ls));
  }
  Vec3 mean{0, 0, 0};
  for (const Vec3& p : w) mean += p;
  mean = mean / static_cast<double>(n);
  double pred[3];
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<std::vector<double>> A = K;
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) y[i] = w[i][axis] - mean[axis];
    for (int col = 0; col < n; ++col) {
      int piv = col;
      for (int r = col + 1; r < n; ++r)
        if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
      std::swap(A[col], A[piv]);
      std::swap(y[col], y[piv]);
      for (int r = col + 1; r < n; ++r) {
        const double f = A[r][col] / A[col][col];
        for (int c2 = col; c2 < n; ++c2) A[r][c2] -= f * A[col][c2];
        y[r] -= f * y[col];
      }
    }
    std::vector<double> alpha(n);
    for (int r = n - 1; r >= 0; --r) {
      double s = y[r];
      for (int c2 = r + 1; c2 < n; ++c2) s -= A[r][c2] * alpha[c2];
      alpha[r] = s / A[r][r];
    }
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += ks[i] * alpha[i];
    pred[axis] = mean[axis] + acc;
  }
  return {pred[0], pred[1], pred[2]};
}

std::vector<Vec3> random_track(Rng& rng, int n, double scale) {
  std::vector<Vec3> out;
  Vec3 p{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1)};
  for (int i = 0; i < n; ++i) {
    out.push_back(p);
    p += {rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
  }
  return out;
}

}  // namespace

TEST_CASE("constant velocity doubles the last displacement") {
  MpmConfig cfg;
  Vec3 p = predict_center({{0, 0, 0}, {1, 0, 0}}, cfg);
  CHECK(p.x == 2.0);
  CHECK(p.y == 0.0);
  CHECK(p.z == 0.0);

  // single entry: padded to zero velocity
  Vec3 q = predict_center({{3, -1, 2}}, cfg);
  CHECK((q - Vec3{3, -1, 2}).norm() == 0.0);
}

TEST_CASE("constant velocity is exactly translation equivariant") {
  MpmConfig cfg;
  // binary-exact coordinates keep the identity bitwise
  std::vector<Vec3> h = {{0.5, -2.25, 1.0}, {1.5, -1.25, 0.5}};
  const Vec3 v{4.0, 8.5, -3.25};
  Vec3 a = predict_center(h, cfg);
  Vec3 b = predict_center(shifted(h, v), cfg);
  CHECK(b.x == a.x + v.x);
  CHECK(b.y == a.y + v.y);
  CHECK(b.z == a.z + v.z);
}

TEST_CASE("linear regression reproduces an exact linear track") {
  MpmConfig cfg;
  cfg.variant = MpmVariant::Linear;
  std::vector<Vec3> h;
  for (int i = 0; i < 10; ++i) h.push_back({double(i), 2.0 * i, -double(i)});
  Vec3 p = predict_center(h, cfg);
  CHECK((p - Vec3{10, 20, -10}).norm() <= 1e-9);
}

TEST_CASE("ridge with vanishing shrinkage matches linear regression") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3> h = random_track(rng, 10, 0.3);
    MpmConfig lin;
    lin.variant = MpmVariant::Linear;
    MpmConfig ridge;
    ridge.variant = MpmVariant::Ridge;
    ridge.lambda = 1e-9;
    CHECK((predict_center(h, lin) - predict_center(h, ridge)).norm() <= 1e-6);
  }
}

TEST_CASE("ridge matches the normal-equations oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> h = random_track(rng, 10, 0.4);
    MpmConfig cfg;
    cfg.variant = MpmVariant::Ridge;
    CHECK((predict_center(h, cfg) - ridge_oracle(h, cfg.lambda)).norm() <= 1e-9);
  }
}

TEST_CASE("extreme shrinkage collapses to the window mean") {
  Rng rng(27);
  std::vector<Vec3> h = random_track(rng, 10, 0.3);
  MpmConfig cfg;
  cfg.variant = MpmVariant::Ridge;
  cfg.lambda = 1e6;
  Vec3 mean{0, 0, 0};
  for (const Vec3& p : h) mean += p;
  mean = mean / 10.0;
  CHECK((predict_center(h, cfg) - mean).norm() <= 1e-3);
}

TEST_CASE("gpr returns the constant on a constant track") {
  MpmConfig cfg;
  cfg.variant = MpmVariant::Gpr;
  std::vector<Vec3> h(10, Vec3{2.5, -1.5, 0.75});
  CHECK((predict_center(h, cfg) - Vec3{2.5, -1.5, 0.75}).norm() <= 1e-6);
}

TEST_CASE("gpr matches the elimination oracle") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3> h = random_track(rng, 10, 0.4);
    MpmConfig cfg;
    cfg.variant = MpmVariant::Gpr;
    CHECK((predict_center(h, cfg) - gpr_oracle(h, cfg.length_scale, cfg.noise)).norm() <= 1e-9);
  }
}

TEST_CASE("regression variants are translation equivariant") {
  Rng rng(47);
  const Vec3 v{113.0, -47.5, 9.25};
  for (MpmVariant variant :
       {MpmVariant::Linear, MpmVariant::Ridge, MpmVariant::Gpr, MpmVariant::RansacRidge}) {
    MpmConfig cfg;
    cfg.variant = variant;
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Vec3> h = random_track(rng, 10, 0.05);
      Vec3 a = predict_center(h, cfg);
      Vec3 b = predict_center(shifted(h, v), cfg);
      CHECK((b - a - v).norm() <= 1e-9);
    }
  }
}

TEST_CASE("ransac shrugs off gross outliers") {
  MpmConfig clean_cfg;
  clean_cfg.variant = MpmVariant::Linear;
  MpmConfig cfg;
  cfg.variant = MpmVariant::RansacRidge;

  std::vector<Vec3> clean = linear_track(10, {0, 0, 0}, {0.4, -0.2, 0.1});
  Vec3 want = predict_center(clean, clean_cfg);

  std::vector<Vec3> dirty = clean;
  dirty[3] += {5, 5, 5};
  dirty[7] += {-5, 5, -5};
  Vec3 got = predict_center(dirty, cfg);
  CHECK((got - want).norm() <= 0.05);
}

TEST_CASE("ransac is deterministic given its seed") {
  Rng rng(57);
  std::vector<Vec3> h = random_track(rng, 10, 0.3);
  h[4] += {3, -3, 3};
  MpmConfig cfg;
  cfg.variant = MpmVariant::RansacRidge;
  cfg.ransac_seed = 99;
  Vec3 a = predict_center(h, cfg);
  Vec3 b = predict_center(h, cfg);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.z == b.z);
}

TEST_CASE("all variants stay finite on degenerate histories") {
  LstmMotionParams lstm_params;
  Rng rng(67);
  lstm_params.init(rng);
  std::vector<std::vector<Vec3>> histories = {
      {{1, 1, 1}},                                  // single point
      std::vector<Vec3>(10, Vec3{0.5, 0.5, 0.5}),   // constant
      random_track(rng, 3, 5.0),                    // short + wild
      random_track(rng, 25, 2.0),                   // long
  };
  for (MpmVariant variant : {MpmVariant::ConstVel, MpmVariant::Linear, MpmVariant::Ridge,
                             MpmVariant::Gpr, MpmVariant::RansacRidge, MpmVariant::Lstm}) {
    MpmConfig cfg;
    cfg.variant = variant;
    cfg.lstm = &lstm_params;
    for (const auto& h : histories) CHECK(predict_center(h, cfg).finite());
  }
}

TEST_CASE("short histories behave like explicitly padded ones") {
  Rng rng(77);
  std::vector<Vec3> h = random_track(rng, 4, 0.3);
  std::vector<Vec3> padded(6, h.front());
  padded.insert(padded.end(), h.begin(), h.end());
  for (MpmVariant variant : {MpmVariant::Linear, MpmVariant::Gpr}) {
    MpmConfig cfg;
    cfg.variant = variant;
    Vec3 a = predict_center(h, cfg);
    Vec3 b = predict_center(padded, cfg);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.z == b.z);
  }
}

TEST_CASE("input validation") {
  MpmConfig cfg;
  CHECK_THROWS_AS(predict_center({}, cfg), DmtError);
  CHECK_THROWS_AS(predict_center({{std::nan(""), 0, 0}}, cfg), DmtError);
  cfg.variant = MpmVariant::Lstm;  // no params attached
  CHECK_THROWS_AS(predict_center({{0, 0, 0}}, cfg), DmtError);
  cfg.variant = MpmVariant::Ridge;
  cfg.lambda = -1.0;
  CHECK_THROWS_AS(predict_center({{0, 0, 0}}, cfg), DmtError);
  cfg.variant = MpmVariant::Gpr;
  cfg.lambda = 1e-2;
  cfg.noise = 0.0;
  CHECK_THROWS_AS(predict_center({{0, 0, 0}}, cfg), DmtError);
}

TEST_CASE("variant names round trip") {
  for (MpmVariant v : {MpmVariant::ConstVel, MpmVariant::Linear, MpmVariant::Ridge,
                       MpmVariant::Gpr, MpmVariant::RansacRidge, MpmVariant::Lstm})
    CHECK(parse_mpm_variant(mpm_variant_name(v)) == v);
  CHECK_THROWS_AS(parse_mpm_variant("kalman"), DmtError);
}

TEST_CASE("zero lstm parameters predict the last center") {
  LstmMotionParams params;  // zero weights
  MpmConfig cfg;
  cfg.variant = MpmVariant::Lstm;
  cfg.lstm = &params;
  Rng rng(87);
  std::vector<Vec3> h = random_track(rng, 10, 0.3);
  CHECK((predict_center(h, cfg) - h.back()).norm() == 0.0);
}

TEST_CASE("lstm training: window extraction and determinism") {
  std::vector<std::vector<Vec3>> one = {linear_track(11, {0, 0, 0}, {0.1, 0, 0})};
  LstmMotionParams p1, p2;
  LstmTrainResult r1 = train_lstm(p1, one, 3, 1e-3, 5);
  CHECK(r1.window_count == 1);

  LstmTrainResult r2 = train_lstm(p2, one, 3, 1e-3, 5);
  CHECK(r1.loss_curve == r2.loss_curve);
  for (int r = 0; r < p1.lstm.Wi.rows; ++r)
    for (int c = 0; c < p1.lstm.Wi.cols; ++c) CHECK(p1.lstm.Wi.at(r, c) == p2.lstm.Wi.at(r, c));

  std::vector<std::vector<Vec3>> too_short = {linear_track(10, {0, 0, 0}, {0.1, 0, 0})};
  LstmMotionParams p3;
  CHECK_THROWS_AS(train_lstm(p3, too_short, 3, 1e-3, 5), DmtError);
}

TEST_CASE("lstm training: window cap subsamples deterministically") {
  std::vector<std::vector<Vec3>> seqs = {linear_track(40, {0, 0, 0}, {0.2, 0.1, 0})};
  LstmMotionParams p1, p2;
  LstmTrainResult r1 = train_lstm(p1, seqs, 2, 1e-3, 5, 8);
  LstmTrainResult r2 = train_lstm(p2, seqs, 2, 1e-3, 5, 8);
  CHECK(r1.window_count == 8);
  CHECK(r1.loss_curve == r2.loss_curve);
}

TEST_CASE("lstm training loss decreases on noiseless linear tracks") {
  std::vector<std::vector<Vec3>> seqs;
  Rng rng(97);
  for (int i = 0; i < 5; ++i) {
    Vec3 start{rng.uniform(-2, 2), rng.uniform(-2, 2), 0};
    Vec3 vel{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.05, 0.05)};
    seqs.push_back(linear_track(30, start, vel));
  }
  LstmMotionParams params;
  LstmTrainResult r = train_lstm(params, seqs, 600, 1e-3, 11);
  int upticks = 0;
  for (size_t i = 1; i < r.loss_curve.size(); ++i)
    if (r.loss_curve[i] > r.loss_curve[i - 1]) ++upticks;
  CHECK(upticks <= static_cast<int>(r.loss_curve.size()) / 20);
  CHECK(r.loss_curve.back() < 0.5 * r.loss_curve.front());
}

TEST_CASE("trained lstm stays within 1.5x of constant velocity on noisy lines") {
  Rng rng(107);
  auto noisy_line = [&](Vec3 start, Vec3 vel, int n) {
    std::vector<Vec3> t = linear_track(n, start, vel);
    for (Vec3& p : t) p += rng.normal_vec3(0.02);
    return t;
  };
  std::vector<std::vector<Vec3>> train_seqs, test_seqs;
  for (int i = 0; i < 30; ++i)
    train_seqs.push_back(noisy_line({rng.uniform(-2, 2), rng.uniform(-2, 2), 0},
                                    {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0}, 25));
  for (int i = 0; i < 10; ++i)
    test_seqs.push_back(noisy_line({rng.uniform(-2, 2), rng.uniform(-2, 2), 0},
                                   {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0}, 25));

  LstmMotionParams params;
  train_lstm(params, train_seqs, 1500, 1e-3, 13);

  MpmConfig lstm_cfg;
  lstm_cfg.variant = MpmVariant::Lstm;
  lstm_cfg.lstm = &params;
  MpmConfig cv_cfg;

  double lstm_err = 0.0, cv_err = 0.0;
  int count = 0;
  for (const auto& seq : test_seqs) {
    for (int s = 0; s + 10 < static_cast<int>(seq.size()); ++s) {
      std::vector<Vec3> h(seq.begin() + s, seq.begin() + s + 10);
      const Vec3& truth = seq[s + 10];
      lstm_err += (predict_center(h, lstm_cfg) - truth).norm();
      cv_err += (predict_center(h, cv_cfg) - truth).norm();
      ++count;
    }
  }
  lstm_err /= count;
  cv_err /= count;
  CHECK(lstm_err <= 1.5 * cv_err);
}
