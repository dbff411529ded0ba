#pragma once

#include <string>
#include <vector>

#include "dmt/config.hpp"
#include "dmt/evm.hpp"
#include "dmt/tracker.hpp"

namespace dmt {

// ---------------------------------------------------------------------------
// Two-phase trainer. Phase 1 fits the sequence motion model on ground-truth
// center windows; phase 2 trains encoder, fusion, heads, and voting module
// under the combined loss. Both phases are bitwise deterministic for a fixed
// seed and independent of the worker count.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 60;
  int batch = 100;
  int epoch_samples = 100;  // pairs drawn per epoch from the pool
  double lr = 1e-3;
  double lr_decay = 0.5;
  int lr_decay_every = 5;
  double alpha = 0.2, beta = 1.0, gamma = 0.2;
  EvmTrainConfig evm;       // voting-center sampling
  SampleConfig sampling;    // pair assembly budgets
  int lstm_epochs = 8000;
  double lstm_lr = 1e-3;
  int lstm_max_windows = 2000;  // 0 = every window
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = DMT_THREADS env var, else hardware concurrency

  void validate() const;
};

TrainConfig train_config(const RunConfig& rc);

// Worker-count resolution used by every parallel section (clamped to [1,64]).
int resolve_threads(int requested);

struct EpochRecord {
  int epoch = 0;     // 1-based
  double lr = 0.0;
  double total = 0.0, cla = 0.0, bc = 0.0, bbox = 0.0;  // epoch means
};

struct TrainResult {
  std::vector<double> lstm_curve;  // phase-1 loss per epoch
  size_t lstm_windows = 0;
  std::vector<EpochRecord> curve;  // phase-2 records
  size_t pair_count = 0;           // pool size after skips
  int skipped_pairs = 0;
};

enum class TrainPhase { All, MpmOnly, TrackerOnly };

// Trains in place. Phase 2 runs epochs (start_epoch, cfg.epochs]; pass the
// Adam state of a loaded checkpoint to resume exactly. Throws when the data
// yields no usable training pairs (or, for phase 1, no 11-frame window).
TrainResult train_model(ModelParams& model, const std::vector<Tracklet>& data,
                        const TrainConfig& cfg, TrainPhase phase = TrainPhase::All,
                        AdamState* adam = nullptr, int start_epoch = 0);

// ---------------------------------------------------------------------------
// Model persistence: registry tensors plus batch-norm running stats, and
// optionally the optimizer state needed for exact resume.
// ---------------------------------------------------------------------------

struct Checkpoint {
  int epoch = 0;  // phase-2 epochs completed
  AdamState adam;
};

void save_model(const std::string& path, ModelParams& model, const Checkpoint* ck = nullptr);

// Loads registry tensors and running stats into `model` (shapes must match).
// Returns true when optimizer state was present and `ck` was filled.
bool load_model(const std::string& path, ModelParams& model, Checkpoint* ck = nullptr);

}  // namespace dmt
