#include "dmt/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace dmt {

std::pair<double, double> ope_metrics(const std::vector<double>& ious,
                                      const std::vector<double>& errors) {
  if (ious.empty()) fail_usage("ope metrics need at least one frame");
  if (ious.size() != errors.size()) fail_usage("iou/error arrays differ in length");
  for (double v : ious)
    if (!(v >= 0.0 && v <= 1.0)) fail_usage("iou outside [0,1]");
  for (double e : errors)
    if (!(e >= 0.0) || !std::isfinite(e)) fail_usage("negative or non-finite center error");

  const double n = static_cast<double>(ious.size());
  double mean = 0.0;
  for (double v : ious) mean += v;
  mean /= n;

  // Independent route: integrate the threshold curve fraction(iou > tau) over
  // [0,1] piecewise between sorted IoU values. Fubini says this is the mean.
  std::vector<double> sorted = ious;
  std::sort(sorted.begin(), sorted.end());
  double auc = 0.0, prev = 0.0;
  for (size_t j = 0; j < sorted.size(); ++j) {
    auc += (sorted[j] - prev) * static_cast<double>(sorted.size() - j) / n;
    prev = sorted[j];
  }
  if (std::abs(mean - auc) > 1e-12)
    fail_numeric("success/AUC identity violated: mean iou " + std::to_string(mean) +
                 " vs curve area " + std::to_string(auc));

  // For a single error e, the area under fraction(error < d) over d in [0,2]
  // is 2 - min(e,2); averaging and normalizing by the cap gives the AUC.
  double precision = 0.0;
  for (double e : errors) precision += (2.0 - std::min(e, 2.0)) / 2.0;
  precision /= n;
  return {mean, precision};
}

double motion_complexity(const Tracklet& tracklet) {
  const size_t t_count = tracklet.frames.size();
  if (t_count < 3) fail_data("motion complexity needs at least 3 frames");
  double sum = 0.0;
  for (size_t t = 2; t < t_count; ++t) {
    const Vec3& a = tracklet.frames[t - 2].gt.center;
    const Vec3& b = tracklet.frames[t - 1].gt.center;
    const Vec3 pred{2.0 * b.x - a.x, 2.0 * b.y - a.y, 2.0 * b.z - a.z};
    const Vec3& c = tracklet.frames[t].gt.center;
    sum += std::sqrt((c.x - pred.x) * (c.x - pred.x) + (c.y - pred.y) * (c.y - pred.y) +
                     (c.z - pred.z) * (c.z - pred.z));
  }
  return sum / static_cast<double>(t_count - 2);
}

long long count_params(ModelParams& model) {
  std::vector<TensorRef> refs;
  model.collect(refs);
  long long total = 0;
  for (const TensorRef& r : refs) total += static_cast<long long>(r.count);
  return total;
}

double estimate_macs(const BackboneConfig& bc, int evm_hidden, int evm_box_hidden,
                     int lstm_hidden, int m1, int m2) {
  const double c = bc.c, cap = bc.group_cap, k = bc.k;
  const double h = evm_hidden, bh = evm_box_hidden, lh = lstm_hidden;
  const double enc_per_row = 3.0 * (c / 2.0) + (c / 2.0) * c;
  double macs = 0.0;
  macs += static_cast<double>(m2) * cap * enc_per_row;  // template encoder
  macs += static_cast<double>(m1) * cap * enc_per_row;  // search encoder
  macs += static_cast<double>(m1) * (c * c + c * 9.0);  // box-cloud head
  macs += static_cast<double>(m1) * k *
          ((2.0 * c + 12.0) * (2.0 * c) + (2.0 * c) * c);  // fusion perceptron
  macs += static_cast<double>(m1) * (c * c + c);           // classifier
  macs += static_cast<double>(m1) * ((c + 3.0) * h + h * h + h * c);  // voting stack
  macs += c * bh + bh * 4.0;                                          // box head
  macs += 10.0 * 4.0 * lh * (3.0 + lh) + lh * 3.0;  // sequence model, 10-step window
  return macs;
}

namespace {

struct TrackletEval {
  std::vector<double> ious, errors;
  double wall_us = 0.0;
  long long steps = 0;
  bool skipped = false;
};

double safe_fps(long long steps, double wall_us) {
  if (steps <= 0 || wall_us <= 0.0) return 0.0;
  return static_cast<double>(steps) / (wall_us * 1e-6);
}

TrackletEval eval_one(const Tracklet& tr, const TrackerConfig& cfg, ModelParams& model) {
  TrackletEval out;
  TrackerState state;
  try {
    state = tracker_init(tr.frames[0].points, tr.frames[0].gt, cfg, model);
  } catch (const DmtError& e) {
    if (e.kind() == ErrorKind::Data) {
      out.skipped = true;
      return out;
    }
    throw;
  }
  for (size_t t = 1; t < tr.frames.size(); ++t) {
    const StepReport rep = tracker_step(state, tr.frames[t].points);
    out.ious.push_back(iou_3d(rep.box, tr.frames[t].gt));
    const Vec3 d = rep.box.center - tr.frames[t].gt.center;
    out.errors.push_back(std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z));
    out.wall_us += rep.wall_us;
    ++out.steps;
  }
  return out;
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void fill_result(OpeResult& r, std::vector<double> ious, std::vector<double> errors,
                 long long steps, double wall_us, long long params, double macs) {
  const auto [s, p] = ope_metrics(ious, errors);
  r.success = s;
  r.precision = p;
  r.ious = std::move(ious);
  r.center_errors = std::move(errors);
  r.fps = safe_fps(steps, wall_us);
  r.param_count = params;
  r.mac_estimate = macs;
}

}  // namespace

BenchmarkResult run_benchmark(const std::vector<Tracklet>& tracklets, const TrackerConfig& cfg,
                              ModelParams& model, int threads) {
  if (tracklets.empty()) fail_data("no tracklets to evaluate");
  const size_t n = tracklets.size();
  std::vector<TrackletEval> evals(n);
  const int workers = std::min<int>(resolve_threads(threads), static_cast<int>(n));

  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](int w) {
    try {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        TrackerConfig per = cfg;
        per.seed = derive_seed(cfg.seed, tag("tracklet"), static_cast<std::uint64_t>(i));
        evals[i] = eval_one(tracklets[i], per, model);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const long long params = count_params(model);
  const double macs = estimate_macs(model.backbone.cfg, model.evm.hidden, model.evm.box_hidden,
                                    model.lstm.lstm.hidden, cfg.m1, cfg.m2);

  // Deterministic fold in tracklet order, grouped by category.
  struct Bucket {
    std::vector<double> ious, errors;
    double wall_us = 0.0;
    long long steps = 0;
  };
  std::map<std::string, Bucket> buckets;
  Bucket all;
  BenchmarkResult result;
  for (size_t i = 0; i < n; ++i) {
    if (evals[i].skipped) {
      result.skipped.push_back(i);
      continue;
    }
    Bucket& b = buckets[tracklets[i].category];
    b.ious.insert(b.ious.end(), evals[i].ious.begin(), evals[i].ious.end());
    b.errors.insert(b.errors.end(), evals[i].errors.begin(), evals[i].errors.end());
    b.wall_us += evals[i].wall_us;
    b.steps += evals[i].steps;
    all.ious.insert(all.ious.end(), evals[i].ious.begin(), evals[i].ious.end());
    all.errors.insert(all.errors.end(), evals[i].errors.begin(), evals[i].errors.end());
    all.wall_us += evals[i].wall_us;
    all.steps += evals[i].steps;
  }
  if (all.ious.empty()) fail_data("every tracklet was skipped");

  for (auto& [cat, b] : buckets) {
    if (b.ious.empty()) continue;
    OpeResult r;
    fill_result(r, std::move(b.ious), std::move(b.errors), b.steps, b.wall_us, params, macs);
    result.per_category.emplace(cat, std::move(r));
  }
  fill_result(result.aggregate, std::move(all.ious), std::move(all.errors), all.steps,
              all.wall_us, params, macs);
  result.steps = all.steps;
  return result;
}

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

const char* ablation_axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::SampleDist: return "sample-dist";
    case AblationAxis::SampleCount: return "sample-count";
    case AblationAxis::TemplateStrategy: return "template-strategy";
    case AblationAxis::MpmVariant: return "mpm-variant";
  }
  fail_usage("unknown ablation axis");
}

AblationAxis parse_ablation_axis(const std::string& name) {
  for (AblationAxis a : {AblationAxis::SampleDist, AblationAxis::SampleCount,
                         AblationAxis::TemplateStrategy, AblationAxis::MpmVariant})
    if (name == ablation_axis_name(a)) return a;
  fail_usage("unknown ablation axis: " + name);
}

namespace {

ModelParams train_fresh(const RunConfig& rc, const std::vector<Tracklet>& train_data) {
  ModelParams model = make_model(rc);
  Rng rng(derive_seed(rc.seed, tag("model_init")));
  model.init(rng);
  train_model(model, train_data, train_config(rc), TrainPhase::All);
  return model;
}

AblationRow eval_cell(const std::string& cell, const RunConfig& rc,
                      const std::vector<Tracklet>& test_data, ModelParams& model) {
  BenchmarkResult bench = run_benchmark(test_data, tracker_config(rc), model);
  AblationRow row;
  row.cell = cell;
  row.result = std::move(bench.aggregate);
  return row;
}

std::string fmt_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

AblationReport run_ablation(AblationAxis axis, const RunConfig& base,
                            const std::vector<Tracklet>& train_data,
                            const std::vector<Tracklet>& test_data) {
  AblationReport report;
  report.axis = axis;
  switch (axis) {
    case AblationAxis::SampleDist: {
      for (double d : {0.65, 0.75, 0.85, 0.95}) {
        RunConfig rc = base;
        rc.sample_dist = d;
        ModelParams model = train_fresh(rc, train_data);
        report.rows.push_back(eval_cell(fmt_cell(d), rc, test_data, model));
      }
      break;
    }
    case AblationAxis::SampleCount: {
      for (int n : {8, 16, 32, 64}) {
        RunConfig rc = base;
        rc.sample_count = n;
        ModelParams model = train_fresh(rc, train_data);
        report.rows.push_back(eval_cell(std::to_string(n), rc, test_data, model));
      }
      break;
    }
    case AblationAxis::TemplateStrategy: {
      ModelParams model = train_fresh(base, train_data);
      for (TemplateStrategy s : {TemplateStrategy::FirstGT, TemplateStrategy::Previous,
                                 TemplateStrategy::FirstAndPrevious,
                                 TemplateStrategy::AllPrevious}) {
        RunConfig rc = base;
        rc.template_strategy = template_strategy_name(s);
        report.rows.push_back(eval_cell(rc.template_strategy, rc, test_data, model));
      }
      break;
    }
    case AblationAxis::MpmVariant: {
      ModelParams model = train_fresh(base, train_data);
      for (MpmVariant v : {MpmVariant::ConstVel, MpmVariant::Linear, MpmVariant::Ridge,
                           MpmVariant::Gpr, MpmVariant::RansacRidge, MpmVariant::Lstm}) {
        RunConfig rc = base;
        rc.mpm_variant = mpm_variant_name(v);
        report.rows.push_back(eval_cell(rc.mpm_variant, rc, test_data, model));
      }
      break;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {

void append_metric_fields(std::string& line, const OpeResult& r) {
  line += "\"frames\":" + std::to_string(r.ious.size());
  line += ",\"success\":" + fmt_g17(r.success);
  line += ",\"precision\":" + fmt_g17(r.precision);
  line += ",\"fps\":0.0";  // timing excluded: records must be run-invariant
  line += ",\"param_count\":" + std::to_string(r.param_count);
  line += ",\"mac_estimate\":" + fmt_g17(r.mac_estimate);
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}

std::string fps1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

}  // namespace

std::string benchmark_table(const BenchmarkResult& r) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "category" << std::right << std::setw(8) << "frames"
     << std::setw(10) << "success" << std::setw(11) << "precision" << std::setw(10) << "fps"
     << "\n";
  for (const auto& [cat, res] : r.per_category)
    os << std::left << std::setw(20) << cat << std::right << std::setw(8) << res.ious.size()
       << std::setw(10) << pct(res.success) << std::setw(11) << pct(res.precision)
       << std::setw(10) << fps1(res.fps) << "\n";
  os << std::left << std::setw(20) << "mean" << std::right << std::setw(8)
     << r.aggregate.ious.size() << std::setw(10) << pct(r.aggregate.success) << std::setw(11)
     << pct(r.aggregate.precision) << std::setw(10) << fps1(r.aggregate.fps) << "\n";
  os << "params " << r.aggregate.param_count << " | macs/step "
     << fmt_g17(r.aggregate.mac_estimate) << " | skipped " << r.skipped.size() << "\n";
  return os.str();
}

std::string benchmark_records(const BenchmarkResult& r) {
  std::string out;
  for (const auto& [cat, res] : r.per_category) {
    std::string line = "{\"category\":" + nlohmann::json(cat).dump() + ",";
    append_metric_fields(line, res);
    line += "}\n";
    out += line;
  }
  std::string line = "{\"category\":\"mean\",";
  append_metric_fields(line, r.aggregate);
  line += "}\n";
  out += line;
  return out;
}

std::string ablation_table(const AblationReport& r) {
  std::ostringstream os;
  os << "axis " << ablation_axis_name(r.axis) << "\n";
  os << std::left << std::setw(20) << "cell" << std::right << std::setw(8) << "frames"
     << std::setw(10) << "success" << std::setw(11) << "precision" << "\n";
  for (const AblationRow& row : r.rows)
    os << std::left << std::setw(20) << row.cell << std::right << std::setw(8)
       << row.result.ious.size() << std::setw(10) << pct(row.result.success) << std::setw(11)
       << pct(row.result.precision) << "\n";
  return os.str();
}

std::string ablation_records(const AblationReport& r) {
  std::string out;
  for (const AblationRow& row : r.rows) {
    std::string line = "{\"axis\":\"" + std::string(ablation_axis_name(r.axis)) + "\"";
    line += ",\"cell\":" + nlohmann::json(row.cell).dump() + ",";
    append_metric_fields(line, row.result);
    line += "}\n";
    out += line;
  }
  return out;
}

}  // namespace dmt
