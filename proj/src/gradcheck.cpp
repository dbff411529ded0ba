#include "dmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dmt/backbone.hpp"
#include "dmt/evm.hpp"

namespace dmt {

double fd_check(std::vector<TensorRef>& params, const std::function<double(GradMap*)>& eval,
                double h, int max_coords, std::uint64_t seed) {
  GradMap analytic;
  eval(&analytic);

  double worst = 0.0;
  Rng rng(seed);
  for (TensorRef& t : params) {
    auto it = analytic.find(t.name);
    if (it == analytic.end()) fail_numeric("fd_check: no analytic gradient for " + t.name);
    const std::vector<double>& g = it->second;
    if (g.size() != t.count) fail_numeric("fd_check: gradient size mismatch for " + t.name);

    std::vector<size_t> coords;
    if (static_cast<int>(t.count) <= max_coords) {
      coords.resize(t.count);
      for (size_t k = 0; k < t.count; ++k) coords[k] = k;
    } else {
      for (int k = 0; k < max_coords; ++k)
        coords.push_back(static_cast<size_t>(rng.uniform_int(0, static_cast<std::int64_t>(t.count) - 1)));
    }

    for (size_t k : coords) {
      const double keep = t.p[k];
      t.p[k] = keep + h;
      const double fp = eval(nullptr);
      t.p[k] = keep - h;
      const double fm = eval(nullptr);
      t.p[k] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double rel = std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1.0});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

namespace {

constexpr double kStep = 1e-5;
constexpr int kMaxCoords = 48;

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.d) v = rng.normal() * scale;
  return m;
}

// Keeps the normalized activations away from the relu kink under +-h nudges.
void randomize_bn(BatchNorm& bn, Rng& rng) {
  for (double& g : bn.gamma) g = rng.uniform(0.8, 1.2);
  for (double& b : bn.beta) b = rng.uniform(-0.3, 0.3);
}

TensorRef wrap(const char* name, Mat& m) {
  return {name, m.d.data(), {m.rows, m.cols}, m.d.size()};
}

double dot(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.d.size(); ++i) s += a.d[i] * b.d[i];
  return s;
}

using Entry = GradCheckEntry;

Entry check_dense(std::uint64_t seed, bool corrupt) {
  Rng rng(derive_seed(seed, tag("dense")));
  Dense d(5, 4);
  d.init(rng);
  Mat x = random_mat(rng, 6, 5);
  const Mat w = random_mat(rng, 6, 4);

  std::vector<TensorRef> refs;
  d.collect("d", refs);
  refs.push_back(wrap("d.x", x));
  auto eval = [&](GradMap* g) {
    const Mat y = d.forward(x);
    if (g) {
      const Mat dx = d.backward(x, w, "d", *g);
      accumulate_grad(*g, "d.x", dx.d.data(), dx.d.size());
      if (corrupt)
        for (double& v : (*g)["d.W"]) v += 0.05;
    }
    return dot(y, w);
  };
  return {"dense", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 1))};
}

Entry check_batch_norm(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("bn")));
  BatchNorm bn(4);
  randomize_bn(bn, rng);
  Mat x = random_mat(rng, 8, 4);
  const Mat w = random_mat(rng, 8, 4);

  std::vector<TensorRef> refs;
  bn.collect("bn", refs);
  refs.push_back(wrap("bn.x", x));
  auto eval = [&](GradMap* g) {
    BatchNorm::Cache cache;
    BnStats sink;
    const Mat y = bn.forward_train(x, cache, &sink);
    if (g) {
      const Mat dx = bn.backward(w, cache, "bn", *g);
      accumulate_grad(*g, "bn.x", dx.d.data(), dx.d.size());
    }
    return dot(y, w);
  };
  return {"batch_norm", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 2))};
}

Entry check_activation(std::uint64_t seed, const char* name, void (*fwd)(Mat&),
                       Mat (*bwd)(const Mat&, const Mat&), std::uint64_t salt) {
  Rng rng(derive_seed(seed, tag(name)));
  Mat x = random_mat(rng, 5, 6);
  const Mat w = random_mat(rng, 5, 6);

  std::vector<TensorRef> refs{wrap("a.x", x)};
  auto eval = [&](GradMap* g) {
    Mat y = x;
    fwd(y);
    if (g) {
      const Mat dx = bwd(y, w);
      accumulate_grad(*g, "a.x", dx.d.data(), dx.d.size());
    }
    return dot(y, w);
  };
  return {name, fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), salt))};
}

Entry check_max_pool(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("pool")));
  Mat x = random_mat(rng, 7, 5);
  std::vector<double> w(5);
  for (double& v : w) v = rng.normal();

  std::vector<TensorRef> refs{wrap("p.x", x)};
  auto eval = [&](GradMap* g) {
    std::vector<double> out;
    std::vector<int> argmax;
    maxpool_set(x, out, argmax);
    if (g) {
      Mat gx(x.rows, x.cols);
      maxpool_set_backward(w, argmax, gx);
      accumulate_grad(*g, "p.x", gx.d.data(), gx.d.size());
    }
    double s = 0.0;
    for (size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
    return s;
  };
  return {"max_pool", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 6))};
}

Entry check_lstm(std::uint64_t seed, const char* name, int steps, std::uint64_t salt) {
  Rng rng(derive_seed(seed, tag(name)));
  LstmParams lp(3, 6);
  lp.init(rng);
  std::vector<Mat> xs, ws;
  for (int t = 0; t < steps; ++t) {
    xs.push_back(random_mat(rng, 2, 3));
    ws.push_back(random_mat(rng, 2, 6));
  }

  std::vector<TensorRef> refs;
  lp.collect("lstm", refs);
  auto eval = [&](GradMap* g) {
    LstmCache cache;
    const std::vector<Mat> hs = lstm_forward_steps(lp, xs, cache);
    if (g) lstm_bptt(lp, cache, ws, "lstm", *g);
    double s = 0.0;
    for (int t = 0; t < steps; ++t) s += dot(hs[static_cast<size_t>(t)], ws[static_cast<size_t>(t)]);
    return s;
  };
  return {name, fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), salt))};
}

Entry check_loss(std::uint64_t seed, const char* name, LossGrad (*loss)(const Mat&, const Mat&),
                 bool binary_target, std::uint64_t salt) {
  Rng rng(derive_seed(seed, tag(name)));
  Mat pred = random_mat(rng, 6, 4);
  Mat target(6, 4);
  for (double& v : target.d) v = binary_target ? (rng.uniform() < 0.5 ? 0.0 : 1.0) : rng.normal();

  std::vector<TensorRef> refs{wrap("l.pred", pred)};
  auto eval = [&](GradMap* g) {
    const LossGrad lg = loss(pred, target);
    if (g) accumulate_grad(*g, "l.pred", lg.grad.d.data(), lg.grad.d.size());
    return lg.value;
  };
  return {name, fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), salt))};
}

Entry check_combined_loss(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("combined")));
  const int n = 6, s = 3;
  Mat logits = random_mat(rng, n, 1);
  Mat labels(n, 1);
  std::vector<double> mask(n);
  for (int i = 0; i < n; ++i) {
    labels.at(i, 0) = i % 2 ? 1.0 : 0.0;
    mask[static_cast<size_t>(i)] = labels.at(i, 0);
  }
  Mat pred_bc = random_mat(rng, n, 9);
  const Mat gt_bc = random_mat(rng, n, 9);
  Mat pred_box = random_mat(rng, s, 4);
  const Mat gt_box = random_mat(rng, s, 4);

  std::vector<TensorRef> refs{wrap("c.logits", logits), wrap("c.bc", pred_bc),
                              wrap("c.box", pred_box)};
  auto eval = [&](GradMap* g) {
    const CombinedLoss cl =
        combined_loss(logits, labels, pred_bc, gt_bc, mask, pred_box, gt_box, 0.2, 1.0, 0.2);
    if (g) {
      accumulate_grad(*g, "c.logits", cl.d_logits.d.data(), cl.d_logits.d.size());
      accumulate_grad(*g, "c.bc", cl.d_bc.d.data(), cl.d_bc.d.size());
      accumulate_grad(*g, "c.box", cl.d_box.d.data(), cl.d_box.d.size());
    }
    return cl.total;
  };
  return {"combined_loss", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 11))};
}

BackboneParams small_backbone(Rng& rng) {
  BackboneConfig cfg;
  cfg.c = 6;
  cfg.k = 4;
  cfg.group_cap = 4;
  cfg.m1 = 8;
  cfg.m2 = 4;
  BackboneParams bp(cfg);
  bp.init(rng);
  randomize_bn(bp.ebn1, rng);
  randomize_bn(bp.ebn2, rng);
  return bp;
}

PointCloud random_cloud(Rng& rng, int n, double scale = 1.0) {
  PointCloud pts;
  for (int i = 0; i < n; ++i)
    pts.push_back({rng.normal() * scale, rng.normal() * scale, rng.normal() * scale});
  return pts;
}

Entry check_boxcloud_head(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("bchead")));
  BackboneParams bp = small_backbone(rng);
  Mat feat = random_mat(rng, 5, 6);
  const Mat w = random_mat(rng, 5, 9);

  std::vector<TensorRef> refs;
  bp.bc1.collect("backbone.bc1", refs);
  bp.bc2.collect("backbone.bc2", refs);
  refs.push_back(wrap("h.x", feat));
  auto eval = [&](GradMap* g) {
    HeadCache hc;
    const Mat y = predict_boxcloud(feat, bp, &hc);
    if (g) {
      const Mat dx = predict_boxcloud_backward(w, hc, bp, *g);
      accumulate_grad(*g, "h.x", dx.d.data(), dx.d.size());
    }
    return dot(y, w);
  };
  return {"boxcloud_head", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 12))};
}

Entry check_classifier(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("cls")));
  BackboneParams bp = small_backbone(rng);
  Mat feat = random_mat(rng, 5, 6);
  const Mat w = random_mat(rng, 5, 1);

  std::vector<TensorRef> refs;
  bp.cls1.collect("backbone.cls1", refs);
  bp.cls2.collect("backbone.cls2", refs);
  refs.push_back(wrap("h.x", feat));
  auto eval = [&](GradMap* g) {
    HeadCache hc;
    const Mat y = classify(feat, bp, &hc);
    if (g) {
      const Mat dx = classify_backward(w, hc, bp, *g);
      accumulate_grad(*g, "h.x", dx.d.data(), dx.d.size());
    }
    return dot(y, w);
  };
  return {"classifier", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 13))};
}

Entry check_encoder_stack(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("enc")));
  BackboneParams bp = small_backbone(rng);
  const PointCloud cloud = random_cloud(rng, 6);
  const Mat w = random_mat(rng, 6, 6);

  std::vector<TensorRef> refs;
  bp.enc1.collect("backbone.enc1", refs);
  bp.enc2.collect("backbone.enc2", refs);
  bp.ebn1.collect("backbone.ebn1", refs);
  bp.ebn2.collect("backbone.ebn2", refs);
  auto eval = [&](GradMap* g) {
    EncodeCache cache;
    BnStats s1, s2;
    const FeatureCloud fc = encode(cloud, bp, 6, 0, true, &cache, &s1, &s2);
    if (g) encode_backward(w, cache, bp, *g);
    return dot(fc.features, w);
  };
  return {"encoder_stack", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 14))};
}

Entry check_fusion_stack(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("fuse")));
  BackboneParams bp = small_backbone(rng);

  FeatureCloud search, templ;
  search.coords = random_cloud(rng, 8);
  search.features = random_mat(rng, 8, 6);
  templ.coords = random_cloud(rng, 4);
  templ.features = random_mat(rng, 4, 6);
  BoxCloudCoords sbc(8), tbc(4);
  for (auto& row : sbc)
    for (double& v : row) v = rng.uniform(0.5, 3.0);
  for (auto& row : tbc)
    for (double& v : row) v = rng.uniform(0.5, 3.0);
  const Mat w = random_mat(rng, 8, 6);

  std::vector<TensorRef> refs;
  bp.agg1.collect("backbone.agg1", refs);
  bp.agg2.collect("backbone.agg2", refs);
  refs.push_back(wrap("f.search", search.features));
  refs.push_back(wrap("f.templ", templ.features));
  auto eval = [&](GradMap* g) {
    FuseCache fc;
    const FeatureCloud fused = baff_fuse(search, sbc, templ, tbc, bp, &fc);
    if (g) {
      auto [ds, dt] = baff_fuse_backward(w, fc, bp, *g);
      accumulate_grad(*g, "f.search", ds.d.data(), ds.d.size());
      accumulate_grad(*g, "f.templ", dt.d.data(), dt.d.size());
    }
    return dot(fused.features, w);
  };
  return {"fusion_stack", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 15))};
}

Entry check_voting_stack(std::uint64_t seed) {
  Rng rng(derive_seed(seed, tag("vote")));
  EvmParams ep(6, 12, 8);
  ep.init(rng);
  randomize_bn(ep.vbn1, rng);
  randomize_bn(ep.vbn2, rng);

  Mat features = random_mat(rng, 8, 6);
  const PointCloud coords = random_cloud(rng, 8);
  const std::vector<Vec3> centers = random_cloud(rng, 3, 0.3);
  const Mat w = random_mat(rng, 3, 4);

  std::vector<TensorRef> refs;
  ep.collect(refs);
  refs.push_back(wrap("v.features", features));
  auto eval = [&](GradMap* g) {
    EvmBatchCache cache;
    BnStats s1, s2;
    const Mat box = evm_train_forward(features, coords, centers, ep, cache, &s1, &s2);
    if (g) {
      const Mat df = evm_train_backward(w, cache, ep, *g);
      accumulate_grad(*g, "v.features", df.d.data(), df.d.size());
    }
    return dot(box, w);
  };
  return {"voting_stack", fd_check(refs, eval, kStep, kMaxCoords, derive_seed(seed, tag("fd"), 16))};
}

}  // namespace

GradCheckReport run_gradcheck_suite(std::uint64_t seed, bool corrupt) {
  GradCheckReport report;
  report.entries.push_back(check_dense(seed, corrupt));
  report.entries.push_back(check_batch_norm(seed));
  report.entries.push_back(check_activation(seed, "relu", relu_inplace, relu_backward, 3));
  report.entries.push_back(check_activation(seed, "sigmoid", sigmoid_inplace, sigmoid_backward, 4));
  report.entries.push_back(check_activation(seed, "tanh", tanh_inplace, tanh_backward, 5));
  report.entries.push_back(check_max_pool(seed));
  report.entries.push_back(check_lstm(seed, "lstm_step", 1, 7));
  report.entries.push_back(check_lstm(seed, "lstm_bptt_10", 10, 8));
  report.entries.push_back(check_loss(seed, "bce_logits", bce_with_logits, true, 9));
  report.entries.push_back(check_loss(seed, "smooth_l1", smooth_l1, false, 10));
  report.entries.push_back(check_loss(seed, "mse_rows", mse_rows, false, 17));
  report.entries.push_back(check_combined_loss(seed));
  report.entries.push_back(check_boxcloud_head(seed));
  report.entries.push_back(check_classifier(seed));
  report.entries.push_back(check_encoder_stack(seed));
  report.entries.push_back(check_fusion_stack(seed));
  report.entries.push_back(check_voting_stack(seed));
  for (const auto& e : report.entries) report.worst = std::max(report.worst, e.max_rel_err);
  return report;
}

}  // namespace dmt
