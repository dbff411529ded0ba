#pragma once

#include <vector>

#include "dmt/geometry.hpp"
#include "dmt/nn.hpp"

namespace dmt {

struct BackboneConfig {
  int m1 = 256;       // search-cloud point/seed budget
  int m2 = 128;       // template-cloud point/seed budget
  int c = 64;         // feature width
  int k = 4;          // template matches per search point
  int group_cap = 16; // neighbors per local group
  double radius = 0.6;
};

struct FeatureCloud {
  PointCloud coords;  // M seed positions
  Mat features;       // M x C, row-aligned with coords
};

// Encoder + fusion parameters. Hidden widths are tied to C so the per-step
// cost scales quadratically with the feature width:
//   encoder 3 -> C/2 -> C (batch norm + relu both layers)
//   boxcloud head C -> C -> 9
//   tuple aggregation (C+3+9+C) -> 2C -> C
//   classifier C -> C -> 1
struct BackboneParams {
  BackboneConfig cfg;
  Dense enc1, enc2;
  BatchNorm ebn1, ebn2;
  Dense bc1, bc2;
  Dense agg1, agg2;
  Dense cls1, cls2;

  explicit BackboneParams(const BackboneConfig& config);
  void init(Rng& rng);
  void collect(std::vector<TensorRef>& out);
};

// Deferred batch-norm statistics of one training forward (encoder runs twice
// per sample: template first, then search).
struct BackboneBnStats {
  BnStats ebn1_t, ebn2_t, ebn1_s, ebn2_s;
  bool has_template = false, has_search = false;
};

struct EncodeCache {
  PointCloud cloud;
  std::vector<int> seeds;     // FPS-selected indices into cloud
  std::vector<int> group;     // n_seeds * cap indices into cloud
  Mat offsets;                // (n_seeds*cap) x 3
  Mat r1, r2;                 // post-activation outputs of the two layers
  BatchNorm::Cache bn1, bn2;
  std::vector<int> pool_arg;  // n_seeds * c argmax rows into r2
};

// Deterministic farthest point sampling. Start: lowest index among the points
// farthest from the centroid; ties during selection go to the lowest index.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int m);

// One set-abstraction level. The cloud is expected at the configured budget
// already; anything else is resampled here with `seed` first. In training
// mode batch stats go to `stats` when given (deferred running-stat update).
FeatureCloud encode(const PointCloud& cloud, BackboneParams& params, int n_seeds,
                    std::uint64_t seed, bool train = false, EncodeCache* cache = nullptr,
                    BnStats* bn1_stats = nullptr, BnStats* bn2_stats = nullptr);

// dfeat is M x C. Accumulates encoder parameter grads.
void encode_backward(const Mat& dfeat, const EncodeCache& cache, BackboneParams& params,
                     GradMap& grads);

struct HeadCache {
  Mat input, hidden;  // hidden is post-relu
};

// Per-point 9D box-distance regression (raw, non-negativity is learned).
Mat predict_boxcloud(const Mat& features, BackboneParams& params, HeadCache* cache = nullptr);
Mat predict_boxcloud_backward(const Mat& dout, const HeadCache& cache, BackboneParams& params,
                              GradMap& grads);

// Per-point target logits on the fused features.
Mat classify(const Mat& fused, BackboneParams& params, HeadCache* cache = nullptr);
Mat classify_backward(const Mat& dout, const HeadCache& cache, BackboneParams& params,
                      GradMap& grads);

struct FuseCache {
  std::vector<int> sel;  // m1*k selected template indices
  Mat t_in;              // m2 x (c+12): [f_t, p_t, bc_t]
  Mat s_feat;            // m1 x c search features (layer-1 input slice)
  Mat r1, r2;            // post-relu layer outputs, (m1*k) rows
  std::vector<int> pool_arg;
};

// Box-aware fusion: match predicted search BoxClouds against template
// BoxClouds (L2, top-k, ties to the lower template index), aggregate the
// [f_t, p_t, bc_t, f_s] tuples with a shared perceptron, max-pool over k.
FeatureCloud baff_fuse(const FeatureCloud& search, const BoxCloudCoords& search_bc,
                       const FeatureCloud& templ, const BoxCloudCoords& templ_bc,
                       BackboneParams& params, FuseCache* cache = nullptr);

// Returns (d search-features, d template-features); parameter grads accumulate.
std::pair<Mat, Mat> baff_fuse_backward(const Mat& dfused, const FuseCache& cache,
                                       BackboneParams& params, GradMap& grads);

// Brute-force pairwise squared L2 between 9D rows (shared with tests).
Mat boxcloud_distance_map(const BoxCloudCoords& a, const BoxCloudCoords& b);

}  // namespace dmt
