#pragma once

#include <cstdint>
#include <string>

namespace dmt {

// ---------------------------------------------------------------------------
// Subcommand entry points. Each returns a process exit code (0 on success)
// and throws DmtError for usage, data, or numeric failures; the frontend maps
// the error kind to exit codes 1/2/3. All randomness flows from the config
// seed (or the explicit --seed override), so every command is reproducible.
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;  // --seed overrides the config seed only when given
  int tracklets = 10;
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string resume;  // checkpoint to continue from; empty = fresh run
  bool mpm_only = false;
  bool tracker_only = false;
};

struct TrackArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string config;
};

struct EvalArgs {
  std::string pred;
  std::string data;
  std::string records;  // optional machine-readable output path
};

struct AblateArgs {
  std::string axis;
  std::string config;
  std::string out;
  std::string train_data;
  std::string test_data;
  std::string records;  // optional machine-readable output path
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_track(const TrackArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_ablate(const AblateArgs& args);
int cmd_gradcheck(const GradcheckArgs& args);

}  // namespace dmt
