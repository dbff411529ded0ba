#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dmt/geometry.hpp"
#include "dmt/rng.hpp"

namespace dmt {

// ---------------------------------------------------------------------------
// Synthetic tracklet generation: a single rigid box moves through an empty
// scene, a virtual sensor at the world origin samples its surfaces, and
// configurable nuisances (noise, dropout, nearby distractor boxes, ground
// clutter) recreate the failure modes real sweeps exhibit.
// ---------------------------------------------------------------------------

enum class MotionPattern { Linear, PiecewiseAccel, SinusoidalYaw, RandomWalk };

const char* motion_pattern_name(MotionPattern p);
MotionPattern parse_motion_pattern(const std::string& name);

// How the tracker (and the training-pair builder) maintains its template.
enum class TemplateStrategy { FirstGT, Previous, FirstAndPrevious, AllPrevious };

const char* template_strategy_name(TemplateStrategy s);
TemplateStrategy parse_template_strategy(const std::string& name);

struct AccelSegment {
  int frames = 10;
  Vec3 accel;  // m / frame^2
};

struct SceneConfig {
  MotionPattern pattern = MotionPattern::Linear;

  Vec3 velocity{0.5, 0.2, 0.0};       // Linear / PiecewiseAccel initial velocity, m per frame
  std::vector<AccelSegment> segments; // PiecewiseAccel; zero acceleration once exhausted
  double amplitude = 0.8;             // SinusoidalYaw lateral swing, m
  double period = 20.0;               // SinusoidalYaw frames per cycle
  double speed = 0.4;                 // SinusoidalYaw forward motion, m per frame
  double sigma_step = 0.2;            // RandomWalk horizontal step scale, m

  double h = 1.5, w = 1.6, l = 3.9;   // target box size
  int frames = 30;
  double density = 40.0;              // surface samples per m^2
  double noise = 0.0;                 // isotropic sensor noise sigma, m
  double p_drop = 0.0;                // per-point dropout probability
  int distractors = 0;
  double min_spawn_dist = 3.0;        // distractor clearance from the target at frame 0
  Vec3 start{6.0, 2.0, 0.9};          // keeps the box bottom above the ground plane
  double start_yaw = 0.0;
  std::string category = "synthetic";

  void validate() const;  // frames >= 2, density > 0, 0 <= p_drop < 1, sizes > 0, ...
};

struct TrackletFrame {
  PointCloud points;
  Box3D gt;
};

struct Tracklet {
  std::vector<TrackletFrame> frames;
  std::string category;
};

// Box trajectory only (no point sampling); exposed for motion-model fixtures
// and the complexity oracle. Yaw follows the heading for SinusoidalYaw and
// stays at start_yaw otherwise.
std::vector<Box3D> simulate_trajectory(const SceneConfig& cfg, std::uint64_t seed);

// Full scene synthesis. Per frame: sample the box's sensor-facing faces (the
// bottom never, all five as a fallback when none faces the sensor), add noise,
// drop points, then append distractor surfaces and ground clutter (10% of the
// frame's target count, on the z=0 plane). Deterministic given (cfg, seed).
// Throws when the first frame ends up with zero target points.
Tracklet generate_tracklet(const SceneConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training-pair assembly. For each consecutive frame pair (t, t+1) the search
// region is the frame-t ground-truth box enlarged by `search_margin` with a
// uniform center jitter of up to +-center_jitter per axis; everything is
// expressed in that region's frame. Labels are also the box-cloud mask.
// ---------------------------------------------------------------------------

struct SampleConfig {
  int search_points = 256;   // M1
  int template_points = 64;  // M2
  double search_margin = 2.0;
  double center_jitter = 0.3;
  TemplateStrategy strategy = TemplateStrategy::FirstAndPrevious;
  int all_previous_cap = 4096;

  void validate() const;
};

struct TrainingSample {
  PointCloud template_points;   // object frame
  BoxCloudCoords template_bc;   // row-aligned with template_points
  PointCloud search_points;     // search-region frame
  Box3D gt_box;                 // same frame
  std::vector<double> labels;   // 1.0 when the search point lies in gt_box
  BoxCloudCoords search_bc;     // regression targets, row-aligned with search_points
  Vec3 gt_center;               // gt_box.center
};

// Pairs whose search or template crop comes up empty are skipped; the count
// lands in *skipped when given.
std::vector<TrainingSample> make_training_samples(const Tracklet& tracklet,
                                                  const SampleConfig& cfg, std::uint64_t seed,
                                                  int* skipped = nullptr);

// ---------------------------------------------------------------------------
// Persistence: line-delimited JSON, one frame per line, floats at 6 decimals.
// A ".gz" suffix switches both directions to gzip.
// ---------------------------------------------------------------------------

void save_tracklets(const std::string& path, const std::vector<Tracklet>& tracklets);
std::vector<Tracklet> load_tracklets(const std::string& path);

// ---------------------------------------------------------------------------
// Center motion supervision: every stride-1 run of 11 consecutive ground-truth
// centers becomes a (10-frame history, next center) pair.
// ---------------------------------------------------------------------------

struct CenterWindow {
  std::array<Vec3, 10> history;
  Vec3 target;
};

std::vector<CenterWindow> extract_center_sequences(const std::vector<Tracklet>& tracklets);

// Full gt center sequence per tracklet (the sequence-model trainer does its
// own windowing; counts match extract_center_sequences).
std::vector<std::vector<Vec3>> center_sequences(const std::vector<Tracklet>& tracklets);

}  // namespace dmt
