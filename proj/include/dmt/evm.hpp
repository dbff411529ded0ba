#pragma once

#include <vector>

#include "dmt/backbone.hpp"
#include "dmt/geometry.hpp"
#include "dmt/nn.hpp"

namespace dmt {

// Voting head: pool offset-augmented search features at a queried center into
// one target feature, then regress (dx, dy, dz, yaw) from it. The box keeps
// the template size.
struct EvmParams {
  int c = 64, hidden = 256, box_hidden = 128;
  Dense v1, v2, v3;        // (c+3) -> hidden -> hidden -> c
  BatchNorm vbn1, vbn2;    // after layers 1 and 2 only
  Dense box1, box2;        // c -> box_hidden -> 4

  explicit EvmParams(int c_ = 64, int hidden_ = 256, int box_hidden_ = 128);
  void init(Rng& rng);
  void collect(std::vector<TensorRef>& out);
};

struct EvmTrainConfig {
  int samples_per_frame = 64;
  double max_sample_dist = 0.75;  // meters

  void validate() const;
};

// Uniform samples in the solid ball of radius cfg.max_sample_dist around
// gt_center (rejection sampling in the bounding cube); deterministic.
std::vector<Vec3> sample_training_centers(const Vec3& gt_center, const EvmTrainConfig& cfg,
                                          std::uint64_t seed);

// Inference: per point, tuple [feature_i, query - p_i] through the voting
// perceptron (batch norm in eval mode), set max-pool over points.
std::vector<double> evm_forward(const FeatureCloud& fused, const Vec3& query,
                                const EvmParams& params);

// Box from the pooled feature: center = query + predicted offset, yaw
// normalized to (-pi, pi], size copied from the template.
Box3D predict_box(const std::vector<double>& fhat, const Vec3& query, double h, double w, double l,
                  const EvmParams& params);

// ---------------------------------------------------------------------------
// Batched training path: one forward over S sampled centers sharing a frame's
// M search points. Layer 1 is evaluated by parts (feature and offset column
// blocks of W1; the offset product further splits into per-center and
// per-point halves), which is the same linear map as the concatenated tuple
// GEMM without materializing S*M input rows. Batch norm runs over all S*M
// rows of the frame.
// ---------------------------------------------------------------------------

struct EvmBatchCache {
  Mat features;              // M x c input copy
  Mat coords_mat;            // M x 3
  Mat centers_mat;           // S x 3
  Mat r1, r2;                // post-relu layer outputs, S*M rows
  Mat r3;                    // raw third-layer output, S*M x c
  BatchNorm::Cache bn1, bn2;
  std::vector<int> pool_arg; // S * c argmax rows into r3
  Mat pooled;                // S x c
  HeadCache box;
};

// Returns S x 4 raw box parameters (dx, dy, dz, yaw). Deferred batch-norm
// stats go to bn1_stats/bn2_stats when given.
Mat evm_train_forward(const Mat& features, const PointCloud& coords,
                      const std::vector<Vec3>& centers, EvmParams& params, EvmBatchCache& cache,
                      BnStats* bn1_stats = nullptr, BnStats* bn2_stats = nullptr);

// dbox is S x 4. Accumulates parameter grads, returns d features (M x c).
Mat evm_train_backward(const Mat& dbox, const EvmBatchCache& cache, EvmParams& params,
                       GradMap& grads);

// ---------------------------------------------------------------------------
// Combined objective: alpha * classification + beta * box-cloud regression +
// gamma * box-parameter regression.
//   - classification: mean logistic loss over per-point logits
//   - box cloud: smooth-L1 summed over the 9 dims, masked per point and
//     normalized by the mask sum (zero when the mask is empty)
//   - box: smooth-L1 summed over the 4 params, averaged over sampled centers
// ---------------------------------------------------------------------------

struct CombinedLoss {
  double total = 0.0, cla = 0.0, bc = 0.0, bbox = 0.0;
  Mat d_logits, d_bc, d_box;
};

CombinedLoss combined_loss(const Mat& logits, const Mat& labels, const Mat& pred_bc,
                           const Mat& gt_bc, const std::vector<double>& mask, const Mat& pred_box,
                           const Mat& gt_box, double alpha = 0.2, double beta = 1.0,
                           double gamma = 0.2);

}  // namespace dmt
