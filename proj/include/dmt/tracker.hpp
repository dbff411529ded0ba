#pragma once

#include <vector>

#include "dmt/backbone.hpp"
#include "dmt/data.hpp"
#include "dmt/evm.hpp"
#include "dmt/motion.hpp"

namespace dmt {

// Which stages of the pipeline run. EvmOnly queries the voting head at the
// previous center (no motion model); MpmOnly emits a template-size box at the
// motion prediction (no appearance model); Persistence repeats the first box.
enum class PipelineMode { Full, EvmOnly, MpmOnly, Persistence };

const char* pipeline_mode_name(PipelineMode m);
PipelineMode parse_pipeline_mode(const std::string& name);

// Every learned tensor the pipeline carries, under one registry.
struct ModelParams {
  BackboneParams backbone;
  EvmParams evm;
  LstmMotionParams lstm;

  explicit ModelParams(const BackboneConfig& bc = BackboneConfig{}, int evm_hidden = 256,
                       int evm_box_hidden = 128, int lstm_hidden = 50);
  void init(Rng& rng);
  void collect(std::vector<TensorRef>& out);
};

struct TrackerConfig {
  double search_margin = 2.0;  // meters added around the previous box
  TemplateStrategy strategy = TemplateStrategy::FirstAndPrevious;
  PipelineMode mode = PipelineMode::Full;
  MpmConfig mpm;               // the lstm pointer is wired to the model at init
  int m1 = 256, m2 = 128;      // search / template budgets
  int all_previous_cap = 4096;
  std::uint64_t seed = 0;      // all per-step resampling derives from this

  void validate() const;
};

struct TrackerState {
  TrackerConfig cfg;
  ModelParams* model = nullptr;  // non-owning

  PointCloud template_pts;   // object frame, always m2 points
  BoxCloudCoords template_bc;
  PointCloud first_crop;     // raw frame-0 crop, object frame
  PointCloud all_buffer;     // AllPrevious running crop buffer
  std::vector<Vec3> history; // world centers, most recent last, length <= 10
  Box3D last_box;
  Box3D init_box;
  int step_index = 0;
};

struct StepReport {
  Box3D box;                 // world frame
  Vec3 coarse_center;        // world-frame query the box head voted around
  bool fallback = false;     // search region came up empty
  bool template_retained = false;  // update skipped because the new crop was empty
  double wall_us = 0.0;
};

// Crops the target out of the first frame, builds the initial template, and
// seeds the center history. Throws when the initial box holds no points.
TrackerState tracker_init(const PointCloud& first_frame, const Box3D& b_init,
                          const TrackerConfig& cfg, ModelParams& model);

// One tracking step: crop the search region around the previous box, fuse
// template and search features, query the voting head at the motion-predicted
// center, regress the box, update history and template. The output box always
// has the initial box's size.
StepReport tracker_step(TrackerState& state, const PointCloud& frame);

}  // namespace dmt
