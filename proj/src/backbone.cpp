#include "dmt/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace dmt {

BackboneParams::BackboneParams(const BackboneConfig& config)
    : cfg(config), enc1(3, config.c / 2), enc2(config.c / 2, config.c), ebn1(config.c / 2),
      ebn2(config.c), bc1(config.c, config.c), bc2(config.c, 9),
      agg1(2 * config.c + 12, 2 * config.c), agg2(2 * config.c, config.c),
      cls1(config.c, config.c), cls2(config.c, 1) {
  if (config.c < 2 || config.c % 2 != 0) fail_usage("feature width must be even and >= 2");
  if (config.k < 1) fail_usage("k must be >= 1");
  if (config.radius <= 0.0) fail_usage("grouping radius must be positive");
  if (config.m1 < config.k || config.m2 < config.k) fail_usage("point budgets must be >= k");
}

void BackboneParams::init(Rng& rng) {
  enc1.init(rng);
  enc2.init(rng);
  bc1.init(rng);
  bc2.init(rng);
  agg1.init(rng);
  agg2.init(rng);
  cls1.init(rng);
  cls2.init(rng);
}

void BackboneParams::collect(std::vector<TensorRef>& out) {
  enc1.collect("backbone.enc1", out);
  enc2.collect("backbone.enc2", out);
  ebn1.collect("backbone.ebn1", out);
  ebn2.collect("backbone.ebn2", out);
  bc1.collect("backbone.bc1", out);
  bc2.collect("backbone.bc2", out);
  agg1.collect("backbone.agg1", out);
  agg2.collect("backbone.agg2", out);
  cls1.collect("backbone.cls1", out);
  cls2.collect("backbone.cls2", out);
}

std::vector<int> farthest_point_sample(const PointCloud& cloud, int m) {
  const int n = static_cast<int>(cloud.size());
  if (n == 0) fail_data("empty cloud");
  if (m > n) fail_numeric("fps: more seeds than points");

  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : cloud) centroid += p;
  centroid = centroid / static_cast<double>(n);

  int start = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (cloud[i] - centroid).squared_norm();
    if (d > best) {  // strict: ties keep the lowest index
      best = d;
      start = i;
    }
  }

  std::vector<int> sel;
  sel.reserve(m);
  sel.push_back(start);
  std::vector<double> min_d2(n);
  for (int i = 0; i < n; ++i) min_d2[i] = (cloud[i] - cloud[start]).squared_norm();
  while (static_cast<int>(sel.size()) < m) {
    int arg = 0;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      if (min_d2[i] > far) {
        far = min_d2[i];
        arg = i;
      }
    }
    sel.push_back(arg);
    for (int i = 0; i < n; ++i)
      min_d2[i] = std::min(min_d2[i], (cloud[i] - cloud[arg]).squared_norm());
  }
  return sel;
}

namespace {

// Up to `cap` nearest neighbors of seed s within radius; padded by repeating
// the nearest entry (the seed itself sits at distance zero).
void group_neighbors(const PointCloud& cloud, int seed, double radius, int cap, int* out) {
  const double r2 = radius * radius;
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    const double d2 = (cloud[i] - cloud[seed]).squared_norm();
    if (d2 <= r2) cand.emplace_back(d2, i);
  }
  std::sort(cand.begin(), cand.end());
  const int take = std::min<int>(cap, static_cast<int>(cand.size()));
  for (int j = 0; j < take; ++j) out[j] = cand[j].second;
  for (int j = take; j < cap; ++j) out[j] = cand[0].second;
}

}  // namespace

FeatureCloud encode(const PointCloud& cloud_in, BackboneParams& params, int n_seeds,
                    std::uint64_t seed, bool train, EncodeCache* cache, BnStats* bn1_stats,
                    BnStats* bn2_stats) {
  if (cloud_in.empty()) fail_data("empty cloud");
  PointCloud cloud = static_cast<int>(cloud_in.size()) == n_seeds
                         ? cloud_in
                         : resample(cloud_in, n_seeds, seed);
  const int cap = params.cfg.group_cap;
  const int c = params.cfg.c;

  const std::vector<int> seeds = farthest_point_sample(cloud, n_seeds);
  std::vector<int> group(static_cast<size_t>(n_seeds) * cap);
  for (int s = 0; s < n_seeds; ++s)
    group_neighbors(cloud, seeds[s], params.cfg.radius, cap, group.data() + static_cast<size_t>(s) * cap);

  Mat offsets(n_seeds * cap, 3);
  for (int s = 0; s < n_seeds; ++s) {
    const Vec3& sp = cloud[seeds[s]];
    for (int j = 0; j < cap; ++j) {
      const Vec3 d = cloud[group[static_cast<size_t>(s) * cap + j]] - sp;
      double* row = offsets.row(s * cap + j);
      row[0] = d.x;
      row[1] = d.y;
      row[2] = d.z;
    }
  }

  EncodeCache local;
  EncodeCache& cc = cache ? *cache : local;
  cc.cloud = cloud;
  cc.seeds = seeds;
  cc.group = group;
  cc.offsets = std::move(offsets);

  Mat a1 = params.enc1.forward(cc.offsets);
  cc.r1 = train ? params.ebn1.forward_train(a1, cc.bn1, bn1_stats) : params.ebn1.forward_eval(a1);
  relu_inplace(cc.r1);
  Mat a2 = params.enc2.forward(cc.r1);
  cc.r2 = train ? params.ebn2.forward_train(a2, cc.bn2, bn2_stats) : params.ebn2.forward_eval(a2);
  relu_inplace(cc.r2);

  FeatureCloud out;
  out.coords.resize(n_seeds);
  out.features.resize(n_seeds, c);
  cc.pool_arg.resize(static_cast<size_t>(n_seeds) * c);
  for (int s = 0; s < n_seeds; ++s) {
    out.coords[s] = cloud[seeds[s]];
    maxpool_rows(cc.r2, s * cap, (s + 1) * cap, out.features.row(s),
                 cc.pool_arg.data() + static_cast<size_t>(s) * c);
  }
  return out;
}

void encode_backward(const Mat& dfeat, const EncodeCache& cache, BackboneParams& params,
                     GradMap& grads) {
  const int c = params.cfg.c;
  const int n_seeds = dfeat.rows;

  Mat dr2(cache.r2.rows, cache.r2.cols);
  for (int s = 0; s < n_seeds; ++s) {
    const double* g = dfeat.row(s);
    const int* arg = cache.pool_arg.data() + static_cast<size_t>(s) * c;
    for (int j = 0; j < c; ++j) dr2.at(arg[j], j) += g[j];
  }

  Mat da2 = relu_backward(cache.r2, dr2);
  da2 = params.ebn2.backward(da2, cache.bn2, "backbone.ebn2", grads);
  Mat dr1 = params.enc2.backward(cache.r1, da2, "backbone.enc2", grads);
  Mat da1 = relu_backward(cache.r1, dr1);
  da1 = params.ebn1.backward(da1, cache.bn1, "backbone.ebn1", grads);
  params.enc1.backward(cache.offsets, da1, "backbone.enc1", grads);
}

Mat predict_boxcloud(const Mat& features, BackboneParams& params, HeadCache* cache) {
  HeadCache local;
  HeadCache& cc = cache ? *cache : local;
  cc.input = features;
  cc.hidden = params.bc1.forward(features);
  relu_inplace(cc.hidden);
  return params.bc2.forward(cc.hidden);
}

Mat predict_boxcloud_backward(const Mat& dout, const HeadCache& cache, BackboneParams& params,
                              GradMap& grads) {
  Mat dh = params.bc2.backward(cache.hidden, dout, "backbone.bc2", grads);
  dh = relu_backward(cache.hidden, dh);
  return params.bc1.backward(cache.input, dh, "backbone.bc1", grads);
}

Mat classify(const Mat& fused, BackboneParams& params, HeadCache* cache) {
  HeadCache local;
  HeadCache& cc = cache ? *cache : local;
  cc.input = fused;
  cc.hidden = params.cls1.forward(fused);
  relu_inplace(cc.hidden);
  return params.cls2.forward(cc.hidden);
}

Mat classify_backward(const Mat& dout, const HeadCache& cache, BackboneParams& params,
                      GradMap& grads) {
  Mat dh = params.cls2.backward(cache.hidden, dout, "backbone.cls2", grads);
  dh = relu_backward(cache.hidden, dh);
  return params.cls1.backward(cache.input, dh, "backbone.cls1", grads);
}

Mat boxcloud_distance_map(const BoxCloudCoords& a, const BoxCloudCoords& b) {
  Mat out(static_cast<int>(a.size()), static_cast<int>(b.size()));
  for (size_t i = 0; i < a.size(); ++i) {
    double* row = out.row(static_cast<int>(i));
    for (size_t j = 0; j < b.size(); ++j) {
      double s = 0.0;
      for (int d = 0; d < 9; ++d) {
        const double r = a[i][d] - b[j][d];
        s += r * r;
      }
      row[j] = s;
    }
  }
  return out;
}

FeatureCloud baff_fuse(const FeatureCloud& search, const BoxCloudCoords& search_bc,
                       const FeatureCloud& templ, const BoxCloudCoords& templ_bc,
                       BackboneParams& params, FuseCache* cache) {
  const int m1 = static_cast<int>(search.coords.size());
  const int m2 = static_cast<int>(templ.coords.size());
  const int c = params.cfg.c;
  const int k = params.cfg.k;
  if (m2 < k) fail_data("template smaller than k");
  if (static_cast<int>(search_bc.size()) != m1 || static_cast<int>(templ_bc.size()) != m2)
    fail_numeric("baff: box cloud row mismatch");

  FuseCache local;
  FuseCache& cc = cache ? *cache : local;

  // Top-k template matches per search point; ties to the lower template index
  // (stable partial sort on (distance, index) pairs).
  const Mat dist = boxcloud_distance_map(search_bc, templ_bc);
  cc.sel.resize(static_cast<size_t>(m1) * k);
  std::vector<std::pair<double, int>> order(m2);
  for (int i = 0; i < m1; ++i) {
    const double* row = dist.row(i);
    for (int j = 0; j < m2; ++j) order[j] = {row[j], j};
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (int j = 0; j < k; ++j) cc.sel[static_cast<size_t>(i) * k + j] = order[j].second;
  }

  // Layer 1 splits by tuple slice: template columns [f_t, p_t, bc_t] and the
  // search column block f_s are mapped separately and summed per tuple. Same
  // linear map as one concatenated GEMM, with the per-point products reused.
  cc.t_in.resize(m2, c + 12);
  for (int j = 0; j < m2; ++j) {
    double* row = cc.t_in.row(j);
    const double* f = templ.features.row(j);
    for (int d = 0; d < c; ++d) row[d] = f[d];
    row[c + 0] = templ.coords[j].x;
    row[c + 1] = templ.coords[j].y;
    row[c + 2] = templ.coords[j].z;
    for (int d = 0; d < 9; ++d) row[c + 3 + d] = templ_bc[j][d];
  }
  cc.s_feat = search.features;

  const int h = params.agg1.out();  // 2c
  // Split weight views: columns [0, c+12) act on t_in, [c+12, 2c+12) on f_s.
  Mat w_t(h, c + 12), w_s(h, c);
  for (int r = 0; r < h; ++r) {
    const double* wrow = params.agg1.W.row(r);
    double* tr = w_t.row(r);
    double* sr = w_s.row(r);
    for (int d = 0; d < c + 12; ++d) tr[d] = wrow[d];
    for (int d = 0; d < c; ++d) sr[d] = wrow[c + 12 + d];
  }
  Mat t1, s1;
  gemm(false, true, 1.0, cc.t_in, w_t, 0.0, t1);
  gemm(false, true, 1.0, cc.s_feat, w_s, 0.0, s1);

  cc.r1.resize(m1 * k, h);
  for (int i = 0; i < m1; ++i) {
    const double* srow = s1.row(i);
    for (int j = 0; j < k; ++j) {
      const double* trow = t1.row(cc.sel[static_cast<size_t>(i) * k + j]);
      double* out = cc.r1.row(i * k + j);
      for (int d = 0; d < h; ++d) out[d] = trow[d] + srow[d] + params.agg1.b[d];
    }
  }
  relu_inplace(cc.r1);
  cc.r2 = params.agg2.forward(cc.r1);
  relu_inplace(cc.r2);

  FeatureCloud out;
  out.coords = search.coords;
  out.features.resize(m1, c);
  cc.pool_arg.resize(static_cast<size_t>(m1) * c);
  for (int i = 0; i < m1; ++i)
    maxpool_rows(cc.r2, i * k, (i + 1) * k, out.features.row(i),
                 cc.pool_arg.data() + static_cast<size_t>(i) * c);
  return out;
}

std::pair<Mat, Mat> baff_fuse_backward(const Mat& dfused, const FuseCache& cache,
                                       BackboneParams& params, GradMap& grads) {
  const int m1 = dfused.rows;
  const int c = params.cfg.c;
  const int k = params.cfg.k;
  const int h = params.agg1.out();
  const int m2 = cache.t_in.rows;

  Mat dr2(cache.r2.rows, cache.r2.cols);
  for (int i = 0; i < m1; ++i) {
    const double* g = dfused.row(i);
    const int* arg = cache.pool_arg.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j) dr2.at(arg[j], j) += g[j];
  }

  Mat da2 = relu_backward(cache.r2, dr2);
  Mat dr1 = params.agg2.backward(cache.r1, da2, "backbone.agg2", grads);
  Mat dpre1 = relu_backward(cache.r1, dr1);

  // Scatter tuple grads back to the two layer-1 slices.
  Mat dt1(m2, h), ds1(m1, h);
  std::vector<double> gb(h, 0.0);
  for (int i = 0; i < m1; ++i) {
    double* ds = ds1.row(i);
    for (int j = 0; j < k; ++j) {
      const double* g = dpre1.row(i * k + j);
      double* dt = dt1.row(cache.sel[static_cast<size_t>(i) * k + j]);
      for (int d = 0; d < h; ++d) {
        dt[d] += g[d];
        ds[d] += g[d];
        gb[d] += g[d];
      }
    }
  }
  accumulate_grad(grads, "backbone.agg1.b", gb.data(), gb.size());

  // dW assembled column-block-wise: [dt1^T t_in | ds1^T s_feat].
  Mat gw_t, gw_s;
  gemm(true, false, 1.0, dt1, cache.t_in, 0.0, gw_t);
  gemm(true, false, 1.0, ds1, cache.s_feat, 0.0, gw_s);
  Mat gw(h, 2 * c + 12);
  for (int r = 0; r < h; ++r) {
    double* out = gw.row(r);
    const double* t = gw_t.row(r);
    const double* s = gw_s.row(r);
    for (int d = 0; d < c + 12; ++d) out[d] = t[d];
    for (int d = 0; d < c; ++d) out[c + 12 + d] = s[d];
  }
  accumulate_grad(grads, "backbone.agg1.W", gw.d.data(), gw.size());

  // Input grads through the split weights.
  Mat w_t(h, c + 12), w_s(h, c);
  for (int r = 0; r < h; ++r) {
    const double* wrow = params.agg1.W.row(r);
    for (int d = 0; d < c + 12; ++d) w_t.at(r, d) = wrow[d];
    for (int d = 0; d < c; ++d) w_s.at(r, d) = wrow[c + 12 + d];
  }
  Mat dt_in, ds_feat;
  gemm(false, false, 1.0, dt1, w_t, 0.0, dt_in);
  gemm(false, false, 1.0, ds1, w_s, 0.0, ds_feat);

  // Template side: only the feature columns flow back (coords and box clouds
  // are data).
  Mat dtempl(m2, c);
  for (int j = 0; j < m2; ++j) {
    const double* src = dt_in.row(j);
    double* dst = dtempl.row(j);
    for (int d = 0; d < c; ++d) dst[d] = src[d];
  }
  return {std::move(ds_feat), std::move(dtempl)};
}

}  // namespace dmt
