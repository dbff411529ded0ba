#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmt/data.hpp"
#include "dmt/eval.hpp"
#include "json.hpp"

using namespace dmt;

namespace {

BackboneConfig tiny_backbone_cfg() {
  BackboneConfig bc;
  bc.m1 = 64;
  bc.m2 = 32;
  bc.c = 16;
  bc.k = 4;
  bc.group_cap = 8;
  bc.radius = 0.6;
  return bc;
}

TrackerConfig tiny_tracker_cfg(PipelineMode mode = PipelineMode::Full) {
  TrackerConfig cfg;
  cfg.m1 = 64;
  cfg.m2 = 32;
  cfg.mode = mode;
  cfg.seed = 7;
  return cfg;
}

ModelParams tiny_model(std::uint64_t seed = 11) {
  ModelParams mp(tiny_backbone_cfg(), 32, 16, 8);
  Rng rng(seed);
  mp.init(rng);
  return mp;
}

std::vector<Tracklet> tiny_set(int count, int frames = 8, std::uint64_t seed = 500) {
  SceneConfig sc;
  sc.frames = frames;
  sc.density = 30.0;
  sc.velocity = {0.25, 0.1, 0.0};
  std::vector<Tracklet> out;
  for (int i = 0; i < count; ++i) out.push_back(generate_tracklet(sc, seed + i));
  return out;
}

// Trapezoid quadrature of the empirical threshold curve over [0, 2], step dd,
// normalized by the 2 m cap. The independent route for the precision metric.
double numeric_precision(const std::vector<double>& errors, double dd) {
  const int n_cells = static_cast<int>(std::llround(2.0 / dd));
  auto frac_below = [&](double d) {
    size_t c = 0;
    for (double e : errors)
      if (e <= d) ++c;
    return static_cast<double>(c) / errors.size();
  };
  double area = 0.0;
  double prev = frac_below(0.0);
  for (int j = 1; j <= n_cells; ++j) {
    const double cur = frac_below(j * dd);
    area += 0.5 * (prev + cur) * dd;
    prev = cur;
  }
  return area / 2.0;
}

bool bits_equal(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("metrics: perfect predictions score 1.0 on both axes") {
  const std::vector<double> ious(20, 1.0);
  const std::vector<double> errors(20, 0.0);
  const auto [s, p] = ope_metrics(ious, errors);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("metrics: success is the mean overlap") {
  Rng rng(42);
  std::vector<double> ious, errors;
  for (int i = 0; i < 257; ++i) {
    ious.push_back(rng.uniform());
    errors.push_back(rng.uniform(0.0, 3.0));
  }
  const auto [s, p] = ope_metrics(ious, errors);
  double mean = 0.0;
  for (double v : ious) mean += v;
  mean /= ious.size();
  CHECK(std::abs(s - mean) <= 1e-12);
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("metrics: center-error curve closed form") {
  // One frame per regime: exact hit, mid-range, at the cap, beyond the cap.
  const auto [s, p] = ope_metrics({1.0, 1.0, 1.0}, {0.0, 1.0, 2.0});
  CHECK(p == doctest::Approx(0.5).epsilon(1e-15));

  const auto [s2, p2] = ope_metrics({0.5, 0.5}, {2.0, 5.0});
  CHECK(p2 == doctest::Approx(0.0).epsilon(1e-15));

  // Larger errors never raise precision.
  const auto [s3, p3] = ope_metrics({1.0, 1.0}, {0.3, 0.3});
  const auto [s4, p4] = ope_metrics({1.0, 1.0}, {0.3, 0.9});
  CHECK(p4 < p3);
}

TEST_CASE("metrics: closed form matches trapezoid integration of the curve") {
  const double dd = 1e-4;

  // Errors on cell midpoints make the trapezoid rule exact.
  std::vector<double> mid_errors;
  Rng rng(7);
  for (int i = 0; i < 400; ++i) {
    const auto cell = rng.uniform_int(0, 19999);
    mid_errors.push_back((static_cast<double>(cell) + 0.5) * dd);
  }
  std::vector<double> ious(mid_errors.size(), 0.5);
  const auto [s, p] = ope_metrics(ious, mid_errors);
  CHECK(std::abs(p - numeric_precision(mid_errors, dd)) <= 1e-9);

  // Arbitrary offsets: residuals cancel over a large sample.
  std::vector<double> rand_errors;
  for (int i = 0; i < 5000; ++i) rand_errors.push_back(rng.uniform(0.0, 2.2));
  std::vector<double> ious2(rand_errors.size(), 0.5);
  const auto [s2, p2] = ope_metrics(ious2, rand_errors);
  CHECK(std::abs(p2 - numeric_precision(rand_errors, dd)) <= 1e-6);
}

TEST_CASE("metrics: input validation") {
  CHECK_THROWS_AS(ope_metrics({}, {}), DmtError);
  CHECK_THROWS_AS(ope_metrics({0.5}, {0.1, 0.2}), DmtError);
  CHECK_THROWS_AS(ope_metrics({1.5}, {0.1}), DmtError);
  CHECK_THROWS_AS(ope_metrics({-0.1}, {0.1}), DmtError);
  CHECK_THROWS_AS(ope_metrics({0.5}, {-0.1}), DmtError);
  const double nan = std::nan("");
  CHECK_THROWS_AS(ope_metrics({0.5}, {nan}), DmtError);
}

TEST_CASE("motion complexity: linear paths score zero") {
  SceneConfig sc;
  sc.frames = 12;
  sc.velocity = {0.4, -0.2, 0.0};
  const std::vector<Box3D> traj = simulate_trajectory(sc, 3);
  Tracklet tr;
  for (const Box3D& b : traj) tr.frames.push_back({{}, b});
  CHECK(motion_complexity(tr) <= 1e-9);
}

TEST_CASE("motion complexity: constant acceleration scores the acceleration magnitude") {
  // Centers c_t = 0.5 * a * t^2 make every constant-velocity prediction miss
  // by exactly |a|.
  const Vec3 a{0.06, 0.08, 0.0};  // |a| = 0.1
  Tracklet tr;
  for (int t = 0; t < 10; ++t) {
    Box3D b = make_box({0.5 * a.x * t * t, 0.5 * a.y * t * t, 1.0}, 1.5, 1.6, 3.9, 0.0);
    tr.frames.push_back({{}, b});
  }
  CHECK(motion_complexity(tr) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("motion complexity: random walks land in a plausible band") {
  SceneConfig sc;
  sc.pattern = MotionPattern::RandomWalk;
  sc.sigma_step = 0.2;
  sc.frames = 40;
  double mean = 0.0;
  const int reps = 10;
  for (int r = 0; r < reps; ++r) {
    const std::vector<Box3D> traj = simulate_trajectory(sc, 900 + r);
    Tracklet tr;
    for (const Box3D& b : traj) tr.frames.push_back({{}, b});
    mean += motion_complexity(tr);
  }
  mean /= reps;
  // Steps are N(0, 0.2) per horizontal axis; consecutive-step differences
  // drive the score well above the linear case but below the step scale x3.
  CHECK(mean > 0.1);
  CHECK(mean < 0.6);
}

TEST_CASE("motion complexity: too-short tracklets are rejected") {
  Tracklet tr;
  tr.frames.push_back({{}, make_box({0, 0, 0}, 1, 1, 1, 0)});
  tr.frames.push_back({{}, make_box({1, 0, 0}, 1, 1, 1, 0)});
  CHECK_THROWS_AS(motion_complexity(tr), DmtError);
}

TEST_CASE("model accounting: parameter count matches a hand count") {
  ModelParams mp = tiny_model();
  // Encoder 3->8->16 plus norms, box head 16->16->9, fusion (2*16+12)->32->16,
  // classifier 16->16->1, voting (16+3)->32->32->16 plus norms, box head
  // 16->16->4, sequence model hidden 8 with a 3-d head.
  const long long enc = 3 * 8 + 8 + 8 * 16 + 16 + 2 * (8 + 16);
  const long long bc_head = 16 * 16 + 16 + 16 * 9 + 9;
  const long long fuse = 44 * 32 + 32 + 32 * 16 + 16;
  const long long cls = 16 * 16 + 16 + 16 * 1 + 1;
  const long long evm = 19 * 32 + 32 + 32 * 32 + 32 + 32 * 16 + 16 + 2 * (32 + 32);
  const long long evm_box = 16 * 16 + 16 + 16 * 4 + 4;
  const long long lstm = 4 * (8 * (3 + 8) + 8) + 8 * 3 + 3;
  CHECK(count_params(mp) == enc + bc_head + fuse + cls + evm + evm_box + lstm);
}

TEST_CASE("model accounting: per-step cost scales near-quadratically in the width") {
  BackboneConfig base = tiny_backbone_cfg();
  base.c = 64;
  BackboneConfig wide = base;
  wide.c = 128;

  // All hidden widths tied to the feature width: doubling it approaches a 4x
  // cost ratio from below (absolute input and output sizes stay fixed).
  const double m_base = estimate_macs(base, 4 * base.c, 2 * base.c, 50, 256, 128);
  const double m_wide = estimate_macs(wide, 4 * wide.c, 2 * wide.c, 50, 256, 128);
  const double ratio = m_wide / m_base;
  CHECK(ratio > 3.8);
  CHECK(ratio < 4.0);

  // More search points cost more.
  CHECK(estimate_macs(base, 256, 128, 50, 512, 128) > estimate_macs(base, 256, 128, 50, 256, 128));
  CHECK(m_wide > m_base);
}

TEST_CASE("benchmark: persistence holds a stationary target perfectly") {
  SceneConfig sc;
  sc.frames = 8;
  sc.density = 30.0;
  sc.velocity = {0.0, 0.0, 0.0};
  std::vector<Tracklet> data;
  for (int i = 0; i < 3; ++i) data.push_back(generate_tracklet(sc, 40 + i));

  ModelParams mp = tiny_model();
  BenchmarkResult r = run_benchmark(data, tiny_tracker_cfg(PipelineMode::Persistence), mp, 1);
  CHECK(r.aggregate.success == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.aggregate.precision == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.aggregate.ious.size() == 3 * 7);
  CHECK(r.steps == 3 * 7);
  CHECK(r.skipped.empty());
  CHECK(r.aggregate.param_count == count_params(mp));
}

TEST_CASE("benchmark: results are identical across worker counts") {
  std::vector<Tracklet> data = tiny_set(5);
  ModelParams mp = tiny_model();

  BenchmarkResult a = run_benchmark(data, tiny_tracker_cfg(), mp, 1);
  BenchmarkResult b = run_benchmark(data, tiny_tracker_cfg(), mp, 4);
  REQUIRE(a.aggregate.ious.size() == b.aggregate.ious.size());
  CHECK(bits_equal(a.aggregate.success, b.aggregate.success));
  CHECK(bits_equal(a.aggregate.precision, b.aggregate.precision));
  for (size_t i = 0; i < a.aggregate.ious.size(); ++i) {
    CHECK(bits_equal(a.aggregate.ious[i], b.aggregate.ious[i]));
    CHECK(bits_equal(a.aggregate.center_errors[i], b.aggregate.center_errors[i]));
  }
}

TEST_CASE("benchmark: aggregate pools frames across categories") {
  std::vector<Tracklet> data = tiny_set(2, 8);
  std::vector<Tracklet> more = tiny_set(2, 12, 700);
  for (auto& t : more) t.category = "other";
  data.insert(data.end(), more.begin(), more.end());

  ModelParams mp = tiny_model();
  BenchmarkResult r = run_benchmark(data, tiny_tracker_cfg(PipelineMode::Persistence), mp, 2);
  REQUIRE(r.per_category.size() == 2);
  const OpeResult& syn = r.per_category.at("synthetic");
  const OpeResult& oth = r.per_category.at("other");
  CHECK(syn.ious.size() == 2 * 7);
  CHECK(oth.ious.size() == 2 * 11);

  const double n1 = static_cast<double>(syn.ious.size());
  const double n2 = static_cast<double>(oth.ious.size());
  const double weighted = (n1 * syn.success + n2 * oth.success) / (n1 + n2);
  CHECK(r.aggregate.success == doctest::Approx(weighted).epsilon(1e-12));
}

TEST_CASE("benchmark: tracklets with an empty initial crop are skipped, not fatal") {
  std::vector<Tracklet> data = tiny_set(2);

  // Second tracklet's points live far from its claimed ground truth.
  Tracklet bad = data[1];
  for (auto& f : bad.frames)
    for (auto& p : f.points) p.x += 100.0;
  data.push_back(bad);

  ModelParams mp = tiny_model();
  BenchmarkResult r = run_benchmark(data, tiny_tracker_cfg(PipelineMode::Persistence), mp, 1);
  REQUIRE(r.skipped.size() == 1);
  CHECK(r.skipped[0] == 2);
  CHECK(r.aggregate.ious.size() == 2 * 7);
}

TEST_CASE("benchmark: rejects empty input and all-skipped sets") {
  ModelParams mp = tiny_model();
  std::vector<Tracklet> none;
  CHECK_THROWS_AS(run_benchmark(none, tiny_tracker_cfg(), mp, 1), DmtError);

  std::vector<Tracklet> data = tiny_set(1);
  for (auto& f : data[0].frames)
    for (auto& p : f.points) p.x += 100.0;
  CHECK_THROWS_AS(run_benchmark(data, tiny_tracker_cfg(), mp, 1), DmtError);
}

TEST_CASE("reports: records are valid JSON with timing zeroed") {
  std::vector<Tracklet> data = tiny_set(3);
  ModelParams mp = tiny_model();
  BenchmarkResult r = run_benchmark(data, tiny_tracker_cfg(PipelineMode::Persistence), mp, 2);
  CHECK(r.aggregate.fps > 0.0);  // the table route keeps the measured rate

  const std::string records = benchmark_records(r);
  std::istringstream is(records);
  std::string line;
  int lines = 0;
  bool saw_mean = false;
  while (std::getline(is, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("fps").get<double>() == 0.0);
    CHECK(j.at("frames").get<long long>() > 0);
    CHECK(j.at("success").is_number());
    CHECK(j.at("precision").is_number());
    CHECK(j.at("param_count").get<long long>() == count_params(mp));
    if (j.at("category") == "mean") saw_mean = true;
    ++lines;
  }
  CHECK(lines == 2);  // one category plus the pooled row
  CHECK(saw_mean);

  const std::string table = benchmark_table(r);
  CHECK(table.find("category") != std::string::npos);
  CHECK(table.find("params") != std::string::npos);
  CHECK(table.find("skipped 0") != std::string::npos);
}

TEST_CASE("reports: identical runs emit identical bytes") {
  std::vector<Tracklet> data = tiny_set(3);
  ModelParams mp = tiny_model();
  const std::string a =
      benchmark_records(run_benchmark(data, tiny_tracker_cfg(), mp, 1));
  const std::string b =
      benchmark_records(run_benchmark(data, tiny_tracker_cfg(), mp, 4));
  CHECK(a == b);
}

TEST_CASE("ablation: axis names round-trip") {
  for (AblationAxis a : {AblationAxis::SampleDist, AblationAxis::SampleCount,
                         AblationAxis::TemplateStrategy, AblationAxis::MpmVariant})
    CHECK(parse_ablation_axis(ablation_axis_name(a)) == a);
  CHECK_THROWS_AS(parse_ablation_axis("nope"), DmtError);
}

namespace {

RunConfig tiny_run_config() {
  RunConfig rc;
  rc.c = 16;
  rc.k = 4;
  rc.group_cap = 8;
  rc.m1 = 64;
  rc.m2 = 32;
  rc.evm_hidden = 32;
  rc.evm_box_hidden = 16;
  rc.lstm_hidden = 8;
  rc.epochs = 1;
  rc.batch = 4;
  rc.epoch_samples = 4;
  rc.sample_count = 4;
  rc.lstm_epochs = 3;
  rc.lstm_max_windows = 20;
  rc.frames = 12;
  rc.seed = 5;
  rc.validate();
  return rc;
}

}  // namespace

TEST_CASE("ablation: tracker-side axes emit one row per grid cell") {
  const RunConfig rc = tiny_run_config();
  std::vector<Tracklet> train = tiny_set(2, 12, 300);
  std::vector<Tracklet> test = tiny_set(2, 8, 310);

  AblationReport rep = run_ablation(AblationAxis::TemplateStrategy, rc, train, test);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.rows[0].cell == "first_gt");
  CHECK(rep.rows[1].cell == "previous");
  CHECK(rep.rows[2].cell == "first_and_previous");
  CHECK(rep.rows[3].cell == "all_previous");
  for (const auto& row : rep.rows) CHECK(row.result.ious.size() == 2 * 7);

  const std::string table = ablation_table(rep);
  for (const auto& row : rep.rows) CHECK(table.find(row.cell) != std::string::npos);
  const std::string records = ablation_records(rep);
  std::istringstream is(records);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("axis") == "template-strategy");
    CHECK(j.at("fps").get<double>() == 0.0);
    ++lines;
  }
  CHECK(lines == 4);
}

TEST_CASE("ablation: training-side axes reproduce the published grids") {
  const RunConfig rc = tiny_run_config();
  std::vector<Tracklet> train = tiny_set(2, 12, 320);
  std::vector<Tracklet> test = tiny_set(1, 8, 330);

  AblationReport rep = run_ablation(AblationAxis::SampleCount, rc, train, test);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.rows[0].cell == "8");
  CHECK(rep.rows[1].cell == "16");
  CHECK(rep.rows[2].cell == "32");
  CHECK(rep.rows[3].cell == "64");

  AblationReport rep2 = run_ablation(AblationAxis::SampleDist, rc, train, test);
  REQUIRE(rep2.rows.size() == 4);
  CHECK(rep2.rows[0].cell == "0.65");
  CHECK(rep2.rows[1].cell == "0.75");
  CHECK(rep2.rows[2].cell == "0.85");
  CHECK(rep2.rows[3].cell == "0.95");
}
