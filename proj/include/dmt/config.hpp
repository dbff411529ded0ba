#pragma once

#include <cstdint>
#include <string>

#include "dmt/data.hpp"
#include "dmt/tracker.hpp"

namespace dmt {

// ---------------------------------------------------------------------------
// Flat run configuration: every tunable of the pipeline under one schema.
// Files are UTF-8 `key = value` lines with `#` comments; every key has a
// baked-in default, so an empty file (or no file at all) is a valid config.
// Unknown keys and out-of-range values are rejected by name.
// ---------------------------------------------------------------------------

struct RunConfig {
  // dataset generation
  std::string pattern = "mixed";  // or one of the motion pattern names
  int frames = 30;
  double density = 40.0;     // surface samples per m^2
  double noise = 0.02;       // sensor noise sigma, m
  double p_drop = 0.3;       // per-point dropout
  int distractors = 1;
  double min_spawn_dist = 3.0;
  double box_h = 1.5, box_w = 1.6, box_l = 3.9;

  // model shape
  int c = 64;                // feature width (even: the encoder lifts to c/2)
  int k = 4;                 // fusion matches per search point
  int group_cap = 16;
  double radius = 0.6;
  int m1 = 256, m2 = 128;    // search / template point budgets
  int evm_hidden = 256;
  int evm_box_hidden = 128;
  int lstm_hidden = 50;

  // training
  int epochs = 60;
  int batch = 100;
  int epoch_samples = 100;   // training pairs drawn per epoch
  double lr = 1e-3;
  double lr_decay = 0.5;
  int lr_decay_every = 5;    // epochs
  double alpha = 0.2, beta = 1.0, gamma = 0.2;  // loss weights
  int sample_count = 64;     // voting-head training centers per pair
  double sample_dist = 0.75; // max center sampling distance, m
  double center_jitter = 0.3;
  int lstm_epochs = 8000;
  double lstm_lr = 1e-3;
  int lstm_max_windows = 2000;  // 0 = all windows
  int window = 10;              // motion history length

  // tracker / evaluation
  double search_margin = 2.0;
  std::string template_strategy = "first_and_previous";
  std::string mode = "full";
  std::string mpm_variant = "constvel";
  int all_previous_cap = 4096;

  std::uint64_t seed = 0;

  void validate() const;  // cross-field checks (budgets vs k, cap vs m2, ...)
};

// Parses config text over the defaults; throws on unknown keys, malformed
// lines, or out-of-range values, naming the offending key.
RunConfig parse_config_text(const std::string& text);

// Empty path -> defaults. Otherwise reads and parses the file.
RunConfig load_config(const std::string& path);

// Derived per-module views. The mpm config's lstm pointer stays null here;
// the tracker wires it to its model at init.
BackboneConfig backbone_config(const RunConfig& rc);
MpmConfig mpm_config(const RunConfig& rc);
TrackerConfig tracker_config(const RunConfig& rc);
SampleConfig sample_config(const RunConfig& rc);
SceneConfig scene_config(const RunConfig& rc);  // pattern left at its default
ModelParams make_model(const RunConfig& rc);    // uninitialized weights

// Synthesizes `count` tracklets under the config's nuisance settings, with
// per-tracklet kinematics (start pose, speed, heading, pattern parameters)
// drawn from seeds derived off rc.seed. pattern "mixed" draws each tracklet's
// motion pattern uniformly; a fixed pattern still randomizes kinematics. The
// category is the pattern name.
std::vector<Tracklet> generate_set(const RunConfig& rc, int count);

}  // namespace dmt
