#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmt/common.hpp"
#include "dmt/nn.hpp"

namespace dmt {

// Coarse motion prediction: estimate the next target center from the recent
// center history. All variants share one entry point and one padding rule
// (histories shorter than the window repeat the earliest entry at the front).
enum class MpmVariant { ConstVel, Linear, Ridge, Gpr, RansacRidge, Lstm };

const char* mpm_variant_name(MpmVariant v);
MpmVariant parse_mpm_variant(const std::string& name);

// LSTM predictor: one recurrent layer plus a dense head mapping the final
// hidden state to the next displacement in meters. Inputs are per-step
// displacements relative to the window's last center, scaled by 1/max_disp.
struct LstmMotionParams {
  LstmParams lstm;
  Dense head;

  explicit LstmMotionParams(int hidden = 50) : lstm(3, hidden), head(hidden, 3) {}
  void init(Rng& rng);
  void collect(std::vector<TensorRef>& out);
};

struct MpmConfig {
  MpmVariant variant = MpmVariant::ConstVel;
  double lambda = 1e-2;        // ridge shrinkage (also the RANSAC refit)
  double length_scale = 5.0;   // GPR RBF width, in frames
  double noise = 1e-2;         // GPR observation noise sigma_n
  int ransac_iters = 50;
  double inlier_thresh = 0.2;  // meters
  int window = 10;
  double lstm_max_disp = 5.0;  // input displacement scale, meters
  std::uint64_t ransac_seed = 0;
  const LstmMotionParams* lstm = nullptr;  // required for the Lstm variant

  void validate() const;  // positive hyperparameters, params present
};

// Next-center estimate; always finite for finite input (degenerate fits fall
// back to constant velocity). Throws on an empty history.
Vec3 predict_center(const std::vector<Vec3>& history, const MpmConfig& cfg);

struct LstmTrainResult {
  std::vector<double> loss_curve;  // one entry per epoch
  size_t window_count = 0;
};

// Full-batch Adam on stride-1 (10-frame window -> next center) pairs from all
// sequences. Initializes `params` from `seed`; bitwise deterministic. When
// max_windows > 0 and more pairs exist, a uniform subsample is trained on.
// Throws when no sequence reaches 11 frames.
LstmTrainResult train_lstm(LstmMotionParams& params,
                           const std::vector<std::vector<Vec3>>& sequences, int epochs, double lr,
                           std::uint64_t seed, int max_windows = 0);

}  // namespace dmt
