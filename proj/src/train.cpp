#include "dmt/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>
#include <utility>

#include "dmt/data.hpp"
#include "dmt/motion.hpp"
#include "dmt/weights.hpp"

namespace dmt {

void TrainConfig::validate() const {
  if (epochs < 0) fail_usage("epochs must be non-negative");
  if (batch < 1) fail_usage("batch must be at least 1");
  if (epoch_samples < 1) fail_usage("epoch_samples must be at least 1");
  if (batch > epoch_samples) fail_usage("batch exceeds the per-epoch sample count");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail_usage("lr must be positive and finite");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) fail_usage("lr_decay must be in (0, 1]");
  if (lr_decay_every < 1) fail_usage("lr_decay_every must be at least 1");
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) fail_usage("loss weights must be non-negative");
  if (lstm_epochs < 1) fail_usage("lstm_epochs must be at least 1");
  if (!(lstm_lr > 0.0) || !std::isfinite(lstm_lr)) fail_usage("lstm_lr must be positive and finite");
  if (lstm_max_windows < 0) fail_usage("lstm_max_windows must be non-negative");
  if (threads < 0) fail_usage("threads must be non-negative");
  evm.validate();
  sampling.validate();
}

TrainConfig train_config(const RunConfig& rc) {
  TrainConfig tc;
  tc.epochs = rc.epochs;
  tc.batch = rc.batch;
  tc.epoch_samples = rc.epoch_samples;
  tc.lr = rc.lr;
  tc.lr_decay = rc.lr_decay;
  tc.lr_decay_every = rc.lr_decay_every;
  tc.alpha = rc.alpha;
  tc.beta = rc.beta;
  tc.gamma = rc.gamma;
  tc.evm.samples_per_frame = rc.sample_count;
  tc.evm.max_sample_dist = rc.sample_dist;
  tc.sampling = sample_config(rc);
  tc.lstm_epochs = rc.lstm_epochs;
  tc.lstm_lr = rc.lstm_lr;
  tc.lstm_max_windows = rc.lstm_max_windows;
  tc.seed = rc.seed;
  return tc;
}

int resolve_threads(int requested) {
  int n = requested;
  if (n <= 0) {
    if (const char* env = std::getenv("DMT_THREADS")) n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (n > 64) n = 64;
  return n;
}

namespace {

BoxCloudCoords mat_to_bc(const Mat& m) {
  BoxCloudCoords out(static_cast<size_t>(m.rows));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < 9; ++j) out[static_cast<size_t>(i)][static_cast<size_t>(j)] = m.at(i, j);
  return out;
}

// Deferred batch-norm statistics of one sample pass, applied to the running
// stats in sample order after the parallel section.
struct SampleStats {
  BnStats t1, t2;  // template encode
  BnStats s1, s2;  // search encode
  BnStats v1, v2;  // voting module
};

struct ChunkOut {
  GradMap grads;
  double total = 0.0, cla = 0.0, bc = 0.0, bbox = 0.0;
};

struct PassResult {
  double total = 0.0, cla = 0.0, bc = 0.0, bbox = 0.0;
};

// One training pair, forward and backward. Gradients accumulate into `grads`;
// batch-norm batch stats land in `stats`. The encoder emits rows in
// farthest-point order, so every per-point supervision tensor is permuted
// through the cache seed lists before it meets the forward outputs.
PassResult sample_pass(const TrainingSample& s, ModelParams& model, const TrainConfig& cfg,
                       std::uint64_t center_seed, GradMap& grads, SampleStats& stats) {
  EncodeCache tcache, scache;
  const FeatureCloud templ =
      encode(s.template_points, model.backbone, cfg.sampling.template_points, 0, true, &tcache,
             &stats.t1, &stats.t2);
  const FeatureCloud search =
      encode(s.search_points, model.backbone, cfg.sampling.search_points, 0, true, &scache,
             &stats.s1, &stats.s2);

  const int m1 = search.features.rows;
  const int m2 = templ.features.rows;

  Mat labels(m1, 1), gt_bc(m1, 9);
  std::vector<double> mask(static_cast<size_t>(m1));
  for (int i = 0; i < m1; ++i) {
    const size_t src = static_cast<size_t>(scache.seeds[static_cast<size_t>(i)]);
    labels.at(i, 0) = s.labels[src];
    mask[static_cast<size_t>(i)] = s.labels[src];
    for (int j = 0; j < 9; ++j) gt_bc.at(i, j) = s.search_bc[src][static_cast<size_t>(j)];
  }
  BoxCloudCoords templ_bc(static_cast<size_t>(m2));
  for (int i = 0; i < m2; ++i)
    templ_bc[static_cast<size_t>(i)] = s.template_bc[static_cast<size_t>(tcache.seeds[static_cast<size_t>(i)])];

  HeadCache bc_cache;
  const Mat pred_bc = predict_boxcloud(search.features, model.backbone, &bc_cache);

  FuseCache fcache;
  const FeatureCloud fused =
      baff_fuse(search, mat_to_bc(pred_bc), templ, templ_bc, model.backbone, &fcache);

  HeadCache cls_cache;
  const Mat logits = classify(fused.features, model.backbone, &cls_cache);

  const std::vector<Vec3> centers = sample_training_centers(s.gt_center, cfg.evm, center_seed);
  EvmBatchCache ecache;
  const Mat pred_box =
      evm_train_forward(fused.features, fused.coords, centers, model.evm, ecache, &stats.v1,
                        &stats.v2);

  Mat gt_box(static_cast<int>(centers.size()), 4);
  for (size_t c = 0; c < centers.size(); ++c) {
    gt_box.at(static_cast<int>(c), 0) = s.gt_center.x - centers[c].x;
    gt_box.at(static_cast<int>(c), 1) = s.gt_center.y - centers[c].y;
    gt_box.at(static_cast<int>(c), 2) = s.gt_center.z - centers[c].z;
    gt_box.at(static_cast<int>(c), 3) = s.gt_box.yaw;
  }

  const CombinedLoss loss = combined_loss(logits, labels, pred_bc, gt_bc, mask, pred_box, gt_box,
                                          cfg.alpha, cfg.beta, cfg.gamma);

  Mat dfused = evm_train_backward(loss.d_box, ecache, model.evm, grads);
  {
    const Mat dcls = classify_backward(loss.d_logits, cls_cache, model.backbone, grads);
    for (size_t i = 0; i < dfused.d.size(); ++i) dfused.d[i] += dcls.d[i];
  }
  auto [dsearch, dtempl] = baff_fuse_backward(dfused, fcache, model.backbone, grads);
  {
    const Mat dhead = predict_boxcloud_backward(loss.d_bc, bc_cache, model.backbone, grads);
    for (size_t i = 0; i < dsearch.d.size(); ++i) dsearch.d[i] += dhead.d[i];
  }
  encode_backward(dsearch, scache, model.backbone, grads);
  encode_backward(dtempl, tcache, model.backbone, grads);

  return {loss.total, loss.cla, loss.bc, loss.bbox};
}

}  // namespace

TrainResult train_model(ModelParams& model, const std::vector<Tracklet>& data,
                        const TrainConfig& cfg, TrainPhase phase, AdamState* adam,
                        int start_epoch) {
  cfg.validate();
  if (data.empty()) fail_data("no training tracklets");
  tune_allocator_for_training();

  TrainResult res;

  if (phase != TrainPhase::TrackerOnly) {
    const LstmTrainResult lr =
        train_lstm(model.lstm, center_sequences(data), cfg.lstm_epochs, cfg.lstm_lr,
                   derive_seed(cfg.seed, tag("lstm")), cfg.lstm_max_windows);
    res.lstm_curve = lr.loss_curve;
    res.lstm_windows = lr.window_count;
  }
  if (phase == TrainPhase::MpmOnly) return res;

  std::vector<TrainingSample> pool;
  int skipped = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    int sk = 0;
    std::vector<TrainingSample> samples =
        make_training_samples(data[i], cfg.sampling, derive_seed(cfg.seed, tag("pairs"), i), &sk);
    skipped += sk;
    for (auto& s : samples) pool.push_back(std::move(s));
  }
  res.pair_count = pool.size();
  res.skipped_pairs = skipped;
  if (pool.empty()) fail_data("training data yields no usable frame pairs");

  std::vector<TensorRef> refs;
  model.collect(refs);
  AdamState local_adam;
  AdamState& opt = adam ? *adam : local_adam;
  const int workers = resolve_threads(cfg.threads);

  // Chunk size is fixed so the gradient fold grouping, and therefore the
  // result, does not depend on the worker count.
  constexpr int kChunk = 4;

  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const double lr_e = cfg.lr * std::pow(cfg.lr_decay, (epoch - 1) / cfg.lr_decay_every);

    std::vector<size_t> order(pool.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, tag("order"), static_cast<std::uint64_t>(epoch)));
    for (size_t i = order.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(
          shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i)));
      std::swap(order[i], order[j]);
    }

    double ep_total = 0.0, ep_cla = 0.0, ep_bc = 0.0, ep_bbox = 0.0;

    for (int b0 = 0; b0 < cfg.epoch_samples; b0 += cfg.batch) {
      const int bsz = std::min(cfg.batch, cfg.epoch_samples - b0);
      const int nchunks = (bsz + kChunk - 1) / kChunk;

      std::vector<ChunkOut> chunks(static_cast<size_t>(nchunks));
      std::vector<SampleStats> stats(static_cast<size_t>(bsz));
      std::vector<PassResult> losses(static_cast<size_t>(bsz));
      std::atomic<int> next{0};

      auto run_chunks = [&](std::exception_ptr& err) {
        try {
          for (;;) {
            const int k = next.fetch_add(1);
            if (k >= nchunks) break;
            ChunkOut& out = chunks[static_cast<size_t>(k)];
            const int lo = k * kChunk, hi = std::min(lo + kChunk, bsz);
            for (int j = lo; j < hi; ++j) {
              const int pos = b0 + j;
              const TrainingSample& s = pool[order[static_cast<size_t>(pos) % pool.size()]];
              const std::uint64_t cseed =
                  derive_seed(cfg.seed, tag("centers"), static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(pos));
              losses[static_cast<size_t>(j)] =
                  sample_pass(s, model, cfg, cseed, out.grads, stats[static_cast<size_t>(j)]);
            }
          }
        } catch (...) {
          err = std::current_exception();
        }
      };

      const int nthreads = std::min(workers, nchunks);
      std::vector<std::exception_ptr> errs(static_cast<size_t>(nthreads));
      if (nthreads <= 1) {
        run_chunks(errs[0]);
      } else {
        std::vector<std::thread> team;
        team.reserve(static_cast<size_t>(nthreads));
        for (int t = 0; t < nthreads; ++t)
          team.emplace_back([&, t] { run_chunks(errs[static_cast<size_t>(t)]); });
        for (auto& th : team) th.join();
      }
      for (const auto& e : errs)
        if (e) std::rethrow_exception(e);

      // Running stats fold in sample order: the encoder sees the template
      // before the search region within each pass.
      for (int j = 0; j < bsz; ++j) {
        const SampleStats& st = stats[static_cast<size_t>(j)];
        model.backbone.ebn1.apply_stats(st.t1);
        model.backbone.ebn2.apply_stats(st.t2);
        model.backbone.ebn1.apply_stats(st.s1);
        model.backbone.ebn2.apply_stats(st.s2);
        model.evm.vbn1.apply_stats(st.v1);
        model.evm.vbn2.apply_stats(st.v2);
        ep_total += losses[static_cast<size_t>(j)].total;
        ep_cla += losses[static_cast<size_t>(j)].cla;
        ep_bc += losses[static_cast<size_t>(j)].bc;
        ep_bbox += losses[static_cast<size_t>(j)].bbox;
      }

      GradMap batch_grads;
      for (auto& ch : chunks) merge_grads(batch_grads, ch.grads);
      scale_grads(batch_grads, 1.0 / bsz);
      opt.step(refs, batch_grads, lr_e);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_e;
    rec.total = ep_total / cfg.epoch_samples;
    rec.cla = ep_cla / cfg.epoch_samples;
    rec.bc = ep_bc / cfg.epoch_samples;
    rec.bbox = ep_bbox / cfg.epoch_samples;
    res.curve.push_back(rec);
  }

  return res;
}

// ---------------------------------------------------------------------------
// Persistence. Registered tensors go through the registry; batch-norm running
// stats and optimizer state ride along as extra tensors.
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kBnPrefixes[4] = {"backbone.ebn1", "backbone.ebn2", "evm.vbn1", "evm.vbn2"};

std::vector<BatchNorm*> bn_layers(ModelParams& model) {
  return {&model.backbone.ebn1, &model.backbone.ebn2, &model.evm.vbn1, &model.evm.vbn2};
}

}  // namespace

void save_model(const std::string& path, ModelParams& model, const Checkpoint* ck) {
  std::vector<TensorRef> refs;
  model.collect(refs);

  TensorMap extra;
  const auto bns = bn_layers(model);
  for (size_t i = 0; i < bns.size(); ++i) {
    const std::string prefix = kBnPrefixes[i];
    extra[prefix + ".run_mean"] = NamedTensor{{bns[i]->c}, bns[i]->run_mean};
    extra[prefix + ".run_var"] = NamedTensor{{bns[i]->c}, bns[i]->run_var};
  }
  if (ck) {
    extra["train.epoch"] = NamedTensor{{1}, {static_cast<double>(ck->epoch)}};
    extra["opt.t"] = NamedTensor{{1}, {static_cast<double>(ck->adam.t)}};
    for (const auto& [name, mv] : ck->adam.moments) {
      extra["opt.m." + name] = NamedTensor{{static_cast<int>(mv.first.size())}, mv.first};
      extra["opt.v." + name] = NamedTensor{{static_cast<int>(mv.second.size())}, mv.second};
    }
  }
  save_weights(path, refs, extra);
}

bool load_model(const std::string& path, ModelParams& model, Checkpoint* ck) {
  const TensorMap loaded = load_weights(path);

  std::vector<TensorRef> refs;
  model.collect(refs);
  assign_weights(loaded, refs);

  const auto bns = bn_layers(model);
  for (size_t i = 0; i < bns.size(); ++i) {
    const std::string prefix = kBnPrefixes[i];
    const auto im = loaded.find(prefix + ".run_mean");
    const auto iv = loaded.find(prefix + ".run_var");
    if (im == loaded.end() || iv == loaded.end())
      fail_data("model file lacks running stats for " + prefix);
    if (static_cast<int>(im->second.data.size()) != bns[i]->c ||
        static_cast<int>(iv->second.data.size()) != bns[i]->c)
      fail_data("running stats size mismatch for " + prefix);
    bns[i]->run_mean = im->second.data;
    bns[i]->run_var = iv->second.data;
  }

  const auto it = loaded.find("opt.t");
  if (it == loaded.end() || !ck) return false;

  ck->adam = AdamState{};
  ck->adam.t = static_cast<long>(it->second.data[0]);
  for (const auto& [name, tensor] : loaded) {
    if (name.rfind("opt.m.", 0) == 0) {
      const std::string pname = name.substr(6);
      const auto vv = loaded.find("opt.v." + pname);
      if (vv == loaded.end()) fail_data("optimizer state truncated: missing opt.v." + pname);
      ck->adam.moments[pname] = {tensor.data, vv->second.data};
    }
  }
  const auto ep = loaded.find("train.epoch");
  ck->epoch = ep == loaded.end() ? 0 : static_cast<int>(ep->second.data[0]);
  return true;
}

}  // namespace dmt
