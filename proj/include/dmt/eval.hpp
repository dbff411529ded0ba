#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dmt/config.hpp"
#include "dmt/tracker.hpp"
#include "dmt/train.hpp"

namespace dmt {

// ---------------------------------------------------------------------------
// One-pass evaluation: the tracker is initialized from ground truth in frame
// 0 and never re-initialized; frames 1..T-1 are scored. Success is the AUC of
// the IoU-threshold curve over [0,1], which equals the mean IoU (both are
// computed and the identity is asserted). Precision is the AUC of the
// center-error curve over [0, 2 m], normalized by the 2 m cap.
// ---------------------------------------------------------------------------

struct OpeResult {
  double success = 0.0;
  double precision = 0.0;
  std::vector<double> ious;           // per evaluated frame
  std::vector<double> center_errors;  // per evaluated frame, meters
  double fps = 0.0;                   // step loop only; 0 in machine records
  long long param_count = 0;
  double mac_estimate = 0.0;          // dense-layer MACs per tracker step
};

// Throws on empty or mismatched inputs, IoUs outside [0,1], or negative
// errors. Returns (success, precision).
std::pair<double, double> ope_metrics(const std::vector<double>& ious,
                                      const std::vector<double>& errors);

// Mean constant-velocity prediction error over the ground-truth centers
// (frames with two predecessors). Throws when the tracklet has < 3 frames.
double motion_complexity(const Tracklet& tracklet);

// Trainable scalar count of the full model registry.
long long count_params(ModelParams& model);

// Dense-layer multiply-accumulates of one full-pipeline tracker step at the
// given budgets (encoder on both clouds, box-cloud head, fusion, classifier,
// voting stack, box head, sequence model over a 10-frame window).
double estimate_macs(const BackboneConfig& bc, int evm_hidden, int evm_box_hidden,
                     int lstm_hidden, int m1, int m2);

struct BenchmarkResult {
  std::map<std::string, OpeResult> per_category;
  OpeResult aggregate;          // all evaluated frames pooled
  std::vector<size_t> skipped;  // tracklet indices whose init failed
  long long steps = 0;          // tracker steps timed
};

// Runs OPE once per tracklet (parallel across tracklets, deterministic fold).
// FPS is measured over tracker_step calls only.
BenchmarkResult run_benchmark(const std::vector<Tracklet>& tracklets, const TrackerConfig& cfg,
                              ModelParams& model, int threads = 0);

// ---------------------------------------------------------------------------
// Ablation sweeps. Axes that change the training objective (voting-center
// distance/count) retrain per cell; tracker-side axes (template strategy,
// motion-model variant) share one base training and swap the knob at
// evaluation time. All cells share the base seed.
// ---------------------------------------------------------------------------

enum class AblationAxis { SampleDist, SampleCount, TemplateStrategy, MpmVariant };

const char* ablation_axis_name(AblationAxis a);
AblationAxis parse_ablation_axis(const std::string& name);

struct AblationRow {
  std::string cell;  // grid value, e.g. "0.75" or "first_gt"
  OpeResult result;  // aggregate over the test set
};

struct AblationReport {
  AblationAxis axis = AblationAxis::SampleDist;
  std::vector<AblationRow> rows;  // one per grid cell, grid order
};

AblationReport run_ablation(AblationAxis axis, const RunConfig& base,
                            const std::vector<Tracklet>& train_data,
                            const std::vector<Tracklet>& test_data);

// ---------------------------------------------------------------------------
// Report emission. Tables are human-readable (percentages, one decimal,
// measured FPS); records are line-delimited JSON with timing fields forced
// to zero so identical runs emit identical bytes.
// ---------------------------------------------------------------------------

std::string benchmark_table(const BenchmarkResult& r);
std::string benchmark_records(const BenchmarkResult& r);
std::string ablation_table(const AblationReport& r);
std::string ablation_records(const AblationReport& r);

}  // namespace dmt
