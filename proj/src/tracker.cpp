#include "dmt/tracker.hpp"

#include <chrono>
#include <cmath>

namespace dmt {

const char* pipeline_mode_name(PipelineMode m) {
  switch (m) {
    case PipelineMode::Full: return "full";
    case PipelineMode::EvmOnly: return "evm_only";
    case PipelineMode::MpmOnly: return "mpm_only";
    case PipelineMode::Persistence: return "persistence";
  }
  fail_usage("unknown pipeline mode");
}

PipelineMode parse_pipeline_mode(const std::string& name) {
  for (PipelineMode m : {PipelineMode::Full, PipelineMode::EvmOnly, PipelineMode::MpmOnly,
                         PipelineMode::Persistence})
    if (name == pipeline_mode_name(m)) return m;
  fail_usage("unknown pipeline mode: " + name);
}

ModelParams::ModelParams(const BackboneConfig& bc, int evm_hidden, int evm_box_hidden,
                         int lstm_hidden)
    : backbone(bc), evm(bc.c, evm_hidden, evm_box_hidden), lstm(lstm_hidden) {}

void ModelParams::init(Rng& rng) {
  backbone.init(rng);
  evm.init(rng);
  lstm.init(rng);
}

void ModelParams::collect(std::vector<TensorRef>& out) {
  backbone.collect(out);
  evm.collect(out);
  lstm.collect(out);
}

void TrackerConfig::validate() const {
  if (!(search_margin > 0.0)) fail_usage("search margin must be positive");
  if (m1 < 1 || m2 < 1) fail_usage("point budgets must be positive");
  if (all_previous_cap < m2) fail_usage("template buffer cap below template budget");
  mpm.validate();
}

namespace {

constexpr int kHistoryWindow = 10;

void push_history(std::vector<Vec3>& history, const Vec3& center) {
  history.push_back(center);
  if (static_cast<int>(history.size()) > kHistoryWindow) history.erase(history.begin());
}

BoxCloudCoords mat_to_bc(const Mat& m) {
  BoxCloudCoords out(m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int d = 0; d < 9; ++d) out[i][d] = m.at(i, d);
  return out;
}

PointCloud crop_object_frame(const PointCloud& frame, const Box3D& box) {
  const std::vector<std::uint8_t> mask = points_in_box(frame, box);
  PointCloud out;
  for (size_t i = 0; i < frame.size(); ++i)
    if (mask[i]) out.push_back(frame[i]);
  return to_box_frame(out, box);
}

// Rebuilds the working template (m2 points + true box-cloud targets) from a
// raw object-frame crop.
void set_template(TrackerState& state, const PointCloud& raw, std::uint64_t seed) {
  state.template_pts = resample(raw, state.cfg.m2, seed);
  const Box3D object_box =
      make_box({0, 0, 0}, state.init_box.h, state.init_box.w, state.init_box.l, 0.0);
  state.template_bc = box_cloud(state.template_pts, object_box);
}

void update_template(TrackerState& state, const PointCloud& frame, const Box3D& predicted,
                     StepReport& report) {
  const std::uint64_t seed = derive_seed(state.cfg.seed, tag("templ"),
                                         static_cast<std::uint64_t>(state.step_index));
  switch (state.cfg.strategy) {
    case TemplateStrategy::FirstGT:
      return;  // the initial template never changes
    case TemplateStrategy::Previous: {
      const PointCloud crop = crop_object_frame(frame, predicted);
      if (crop.empty()) {
        report.template_retained = true;
        return;
      }
      set_template(state, crop, seed);
      return;
    }
    case TemplateStrategy::FirstAndPrevious: {
      const PointCloud crop = crop_object_frame(frame, predicted);
      if (crop.empty()) {
        report.template_retained = true;
        return;
      }
      PointCloud merged = state.first_crop;
      merged.insert(merged.end(), crop.begin(), crop.end());
      set_template(state, merged, seed);
      return;
    }
    case TemplateStrategy::AllPrevious: {
      const PointCloud crop = crop_object_frame(frame, predicted);
      if (crop.empty()) {
        report.template_retained = true;
        return;
      }
      state.all_buffer.insert(state.all_buffer.end(), crop.begin(), crop.end());
      if (static_cast<int>(state.all_buffer.size()) > state.cfg.all_previous_cap)
        state.all_buffer = resample(state.all_buffer, state.cfg.all_previous_cap,
                                    derive_seed(state.cfg.seed, tag("buffer_cap"),
                                                static_cast<std::uint64_t>(state.step_index)));
      set_template(state, state.all_buffer, seed);
      return;
    }
  }
}

}  // namespace

TrackerState tracker_init(const PointCloud& first_frame, const Box3D& b_init,
                          const TrackerConfig& cfg, ModelParams& model) {
  TrackerState state;
  state.cfg = cfg;
  state.cfg.mpm.lstm = &model.lstm;
  state.cfg.validate();
  if (cfg.m1 < model.backbone.cfg.k || cfg.m2 < model.backbone.cfg.k)
    fail_usage("point budgets must cover the fusion match count");
  state.model = &model;
  state.init_box = b_init;
  state.last_box = b_init;

  state.first_crop = crop_object_frame(first_frame, b_init);
  if (state.first_crop.empty()) fail_data("no target points in initial box");
  state.all_buffer = state.first_crop;
  set_template(state, state.first_crop, derive_seed(cfg.seed, tag("init_templ")));
  state.history = {b_init.center};
  return state;
}

StepReport tracker_step(TrackerState& state, const PointCloud& frame) {
  const auto t0 = std::chrono::steady_clock::now();
  StepReport report;
  const TrackerConfig& cfg = state.cfg;
  ModelParams& model = *state.model;
  const Box3D& prev = state.last_box;

  auto finish = [&](const Box3D& box, const Vec3& history_center) {
    report.box = box;
    push_history(state.history, history_center);
    state.last_box = box;
    ++state.step_index;
    report.wall_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
    return report;
  };

  if (cfg.mode == PipelineMode::Persistence) {
    report.coarse_center = state.init_box.center;
    return finish(state.init_box, state.init_box.center);
  }

  // Coarse center: motion-predicted for the modes that use the MPM, the
  // previous center otherwise.
  const bool uses_mpm = cfg.mode == PipelineMode::Full || cfg.mode == PipelineMode::MpmOnly;
  const Vec3 coarse_world = uses_mpm ? predict_center(state.history, state.cfg.mpm) : prev.center;
  report.coarse_center = coarse_world;

  if (cfg.mode == PipelineMode::MpmOnly) {
    const Box3D box = make_box(coarse_world, state.init_box.h, state.init_box.w, state.init_box.l,
                               prev.yaw);
    return finish(box, box.center);
  }

  const Box3D region = enlarge(prev, cfg.search_margin);
  const std::vector<std::uint8_t> mask = points_in_box(frame, region);
  PointCloud search_world;
  for (size_t i = 0; i < frame.size(); ++i)
    if (mask[i]) search_world.push_back(frame[i]);

  if (search_world.empty()) {
    // Nothing to vote on: carry the previous box to the motion prediction.
    report.fallback = true;
    const Box3D box = make_box(coarse_world, state.init_box.h, state.init_box.w, state.init_box.l,
                               prev.yaw);
    return finish(box, coarse_world);
  }

  const PointCloud search_local =
      resample(to_box_frame(search_world, prev), cfg.m1,
               derive_seed(cfg.seed, tag("search"), static_cast<std::uint64_t>(state.step_index)));

  EncodeCache templ_cache;
  const FeatureCloud templ_enc = encode(state.template_pts, model.backbone, cfg.m2,
                                        derive_seed(cfg.seed, tag("enc_t"),
                                                    static_cast<std::uint64_t>(state.step_index)),
                                        false, &templ_cache);
  const FeatureCloud search_enc = encode(search_local, model.backbone, cfg.m1,
                                         derive_seed(cfg.seed, tag("enc_s"),
                                                     static_cast<std::uint64_t>(state.step_index)));
  // The encoder emits rows in farthest-point order; realign the stored
  // template descriptors so each fused tuple pairs a feature with its own
  // box distances.
  BoxCloudCoords templ_bc(templ_enc.coords.size());
  for (size_t i = 0; i < templ_bc.size(); ++i)
    templ_bc[i] = state.template_bc[templ_cache.seeds[i]];
  const BoxCloudCoords search_bc = mat_to_bc(predict_boxcloud(search_enc.features, model.backbone));
  const FeatureCloud fused =
      baff_fuse(search_enc, search_bc, templ_enc, templ_bc, model.backbone);

  const Vec3 query_local = to_box_frame(coarse_world, prev);
  const std::vector<double> fhat = evm_forward(fused, query_local, model.evm);
  const Box3D box_local = predict_box(fhat, query_local, state.init_box.h, state.init_box.w,
                                      state.init_box.l, model.evm);
  const Box3D box_world = make_box(from_box_frame(box_local.center, prev), box_local.h,
                                   box_local.w, box_local.l,
                                   normalize_angle(box_local.yaw + prev.yaw));

  update_template(state, frame, box_world, report);
  return finish(box_world, box_world.center);
}

}  // namespace dmt
