#include "dmt/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "dmt/eval.hpp"
#include "dmt/gradcheck.hpp"
#include "json.hpp"

namespace dmt {

namespace {

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail_data("cannot write: " + path);
  os << text;
  if (!os) fail_data("short write: " + path);
}

}  // namespace

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const GenDataArgs& args) {
  RunConfig rc = load_config(args.config);
  if (args.seed_set) rc.seed = args.seed;
  if (args.tracklets < 1) fail_usage("tracklets must be positive");

  const std::vector<Tracklet> set = generate_set(rc, args.tracklets);
  save_tracklets(args.out, set);

  long long frames = 0, points = 0;
  for (const Tracklet& t : set) {
    frames += static_cast<long long>(t.frames.size());
    for (const TrackletFrame& f : t.frames) points += static_cast<long long>(f.points.size());
  }
  std::printf("tracklets %d | frames %lld | mean points/frame %.1f\n", args.tracklets, frames,
              frames ? static_cast<double>(points) / frames : 0.0);

  if (!set.empty() && set[0].frames.size() >= 3) {
    const double edges[] = {0.0, 0.05, 0.10, 0.20, 0.40};
    int counts[5] = {0, 0, 0, 0, 0};
    for (const Tracklet& t : set) {
      const double c = motion_complexity(t);
      int b = 0;
      while (b < 4 && c >= edges[b + 1]) ++b;
      ++counts[b];
    }
    std::printf("complexity histogram:\n");
    const char* labels[] = {"[0.00, 0.05)", "[0.05, 0.10)", "[0.10, 0.20)", "[0.20, 0.40)",
                            "[0.40,  inf)"};
    for (int b = 0; b < 5; ++b) {
      std::printf("  %s %5d  ", labels[b], counts[b]);
      for (int k = 0; k < std::min(counts[b], 60); ++k) std::putchar('#');
      std::putchar('\n');
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const TrainArgs& args) {
  if (args.mpm_only && args.tracker_only)
    fail_usage("choose at most one of --mpm-only / --tracker-only");
  const RunConfig rc = load_config(args.config);
  const TrainConfig tc = train_config(rc);
  const std::vector<Tracklet> data = load_tracklets(args.data);

  TrainPhase phase = args.mpm_only      ? TrainPhase::MpmOnly
                     : args.tracker_only ? TrainPhase::TrackerOnly
                                         : TrainPhase::All;
  // A checkpoint already carries trained motion weights; don't redo phase 1.
  if (!args.resume.empty() && phase == TrainPhase::All) phase = TrainPhase::TrackerOnly;

  ModelParams model = make_model(rc);
  AdamState adam;
  int start_epoch = 0;
  if (args.resume.empty()) {
    Rng rng(derive_seed(rc.seed, tag("model_init")));
    model.init(rng);
  } else {
    Checkpoint ck;
    if (!load_model(args.resume, model, &ck))
      fail_data("resume checkpoint lacks optimizer state: " + args.resume);
    adam = std::move(ck.adam);
    start_epoch = ck.epoch;
  }

  const TrainResult r = train_model(model, data, tc, phase, &adam, start_epoch);

  if (!r.lstm_curve.empty())
    std::printf("{\"phase\":\"mpm\",\"epochs\":%zu,\"windows\":%zu,\"final_loss\":%s}\n",
                r.lstm_curve.size(), r.lstm_windows, fmt_g17(r.lstm_curve.back()).c_str());
  for (const EpochRecord& e : r.curve)
    std::printf("{\"epoch\":%d,\"lr\":%s,\"total\":%s,\"cla\":%s,\"bc\":%s,\"bbox\":%s}\n",
                e.epoch, fmt_g17(e.lr).c_str(), fmt_g17(e.total).c_str(), fmt_g17(e.cla).c_str(),
                fmt_g17(e.bc).c_str(), fmt_g17(e.bbox).c_str());

  Checkpoint ck;
  ck.epoch = phase == TrainPhase::MpmOnly ? start_epoch : tc.epochs;
  ck.adam = std::move(adam);
  save_model(args.out, model, &ck);
  std::fprintf(stderr, "saved %s | pairs %zu | skipped %d\n", args.out.c_str(), r.pair_count,
               r.skipped_pairs);
  return 0;
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

namespace {

std::string step_line(size_t tracklet, int frame, const StepReport& rep) {
  nlohmann::json j;
  j["tracklet"] = tracklet;
  j["frame"] = frame;
  j["center"] = {rep.box.center.x, rep.box.center.y, rep.box.center.z};
  j["yaw"] = rep.box.yaw;
  j["h"] = rep.box.h;
  j["w"] = rep.box.w;
  j["l"] = rep.box.l;
  j["coarse"] = {rep.coarse_center.x, rep.coarse_center.y, rep.coarse_center.z};
  j["fallback"] = rep.fallback;
  j["template_retained"] = rep.template_retained;
  return j.dump() + "\n";
}

}  // namespace

int cmd_track(const TrackArgs& args) {
  const RunConfig rc = load_config(args.config);
  ModelParams model = make_model(rc);
  load_model(args.model, model);
  const std::vector<Tracklet> data = load_tracklets(args.data);
  if (data.empty()) fail_data("no tracklets in " + args.data);

  const TrackerConfig base = tracker_config(rc);
  const size_t n = data.size();
  std::vector<std::string> blocks(n);
  std::atomic<size_t> next{0};
  std::atomic<long long> steps{0};
  std::atomic<size_t> skipped{0};

  const int workers = std::min<int>(resolve_threads(0), static_cast<int>(n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  auto work = [&](int w) {
    try {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        const Tracklet& tr = data[i];
        TrackerConfig per = base;
        per.seed = derive_seed(base.seed, tag("tracklet"), static_cast<std::uint64_t>(i));
        TrackerState st;
        try {
          st = tracker_init(tr.frames[0].points, tr.frames[0].gt, per, model);
        } catch (const DmtError& e) {
          if (e.kind() != ErrorKind::Data) throw;
          blocks[i] = "{\"tracklet\":" + std::to_string(i) + ",\"skipped\":true}\n";
          skipped.fetch_add(1);
          continue;
        }
        std::string block;
        for (size_t t = 1; t < tr.frames.size(); ++t) {
          const StepReport rep = tracker_step(st, tr.frames[t].points);
          block += step_line(i, static_cast<int>(t), rep);
          steps.fetch_add(1);
        }
        blocks[i] = std::move(block);
      }
    } catch (...) {
      errors[static_cast<size_t>(w)] = std::current_exception();
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::string out;
  for (const std::string& b : blocks) out += b;
  write_text(args.out, out);
  std::fprintf(stderr, "tracked %zu tracklets | %lld steps | skipped %zu\n", n - skipped.load(),
               steps.load(), skipped.load());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

namespace {

struct PredSet {
  std::map<size_t, std::map<int, Box3D>> boxes;
  std::set<size_t> skipped;
};

PredSet parse_predictions(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_data("cannot open predictions: " + path);
  PredSet out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail_data("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      const size_t id = j.at("tracklet").get<size_t>();
      if (j.value("skipped", false)) {
        out.skipped.insert(id);
        continue;
      }
      const int frame = j.at("frame").get<int>();
      const auto c = j.at("center");
      const Box3D box =
          make_box({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()},
                   j.at("h").get<double>(), j.at("w").get<double>(), j.at("l").get<double>(),
                   j.at("yaw").get<double>());
      if (!out.boxes[id].emplace(frame, box).second)
        fail_data("predictions line " + std::to_string(lineno) + ": duplicate frame " +
                  std::to_string(frame) + " for tracklet " + std::to_string(id));
    } catch (const nlohmann::json::exception& e) {
      fail_data("predictions line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string join_ids(const std::set<size_t>& ids) {
  std::string s;
  for (size_t id : ids) {
    if (!s.empty()) s += ", ";
    s += std::to_string(id);
  }
  return s;
}

std::string pct1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
  return buf;
}

}  // namespace

int cmd_eval(const EvalArgs& args) {
  const std::vector<Tracklet> data = load_tracklets(args.data);
  if (data.empty()) fail_data("no tracklets in " + args.data);
  const PredSet preds = parse_predictions(args.pred);

  // Every non-skipped tracklet must be predicted on exactly frames 1..T-1.
  std::set<size_t> mismatched;
  for (const auto& [id, frames] : preds.boxes)
    if (id >= data.size()) mismatched.insert(id);
  for (size_t id : preds.skipped)
    if (id >= data.size() || preds.boxes.count(id)) mismatched.insert(id);
  for (size_t i = 0; i < data.size(); ++i) {
    if (preds.skipped.count(i)) continue;
    const auto it = preds.boxes.find(i);
    if (it == preds.boxes.end()) {
      mismatched.insert(i);
      continue;
    }
    const size_t want = data[i].frames.size() - 1;
    if (it->second.size() != want || it->second.begin()->first != 1 ||
        it->second.rbegin()->first != static_cast<int>(want))
      mismatched.insert(i);
  }
  if (!mismatched.empty())
    fail_data("prediction/data tracklet mismatch: " + join_ids(mismatched));

  struct Bucket {
    std::vector<double> ious, errors;
  };
  std::map<std::string, Bucket> buckets;
  Bucket all;
  for (size_t i = 0; i < data.size(); ++i) {
    if (preds.skipped.count(i)) continue;
    Bucket& b = buckets[data[i].category];
    for (const auto& [frame, box] : preds.boxes.at(i)) {
      const Box3D& gt = data[i].frames[static_cast<size_t>(frame)].gt;
      const double iou = iou_3d(box, gt);
      const Vec3 d = box.center - gt.center;
      const double err = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
      b.ious.push_back(iou);
      b.errors.push_back(err);
      all.ious.push_back(iou);
      all.errors.push_back(err);
    }
  }
  if (all.ious.empty()) fail_data("every tracklet was skipped");

  std::ostringstream table;
  table << std::left << std::setw(20) << "category" << std::right << std::setw(8) << "frames"
        << std::setw(10) << "success" << std::setw(11) << "precision" << "\n";
  std::string records;
  auto emit = [&](const std::string& name, Bucket& b) {
    const auto [s, p] = ope_metrics(b.ious, b.errors);
    table << std::left << std::setw(20) << name << std::right << std::setw(8) << b.ious.size()
          << std::setw(10) << pct1(s) << std::setw(11) << pct1(p) << "\n";
    records += "{\"category\":" + nlohmann::json(name).dump() +
               ",\"frames\":" + std::to_string(b.ious.size()) + ",\"success\":" + fmt_g17(s) +
               ",\"precision\":" + fmt_g17(p) + ",\"fps\":0.0}\n";
  };
  for (auto& [cat, b] : buckets) emit(cat, b);
  emit("mean", all);

  std::fputs(table.str().c_str(), stdout);
  if (!args.records.empty()) write_text(args.records, records);
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const AblateArgs& args) {
  const AblationAxis axis = parse_ablation_axis(args.axis);
  const RunConfig rc = load_config(args.config);
  const std::vector<Tracklet> train = load_tracklets(args.train_data);
  const std::vector<Tracklet> test = load_tracklets(args.test_data);

  const AblationReport rep = run_ablation(axis, rc, train, test);
  const std::string table = ablation_table(rep);
  write_text(args.out, table);
  std::fputs(table.c_str(), stdout);
  if (!args.records.empty()) write_text(args.records, ablation_records(rep));
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(const GradcheckArgs& args) {
  const GradCheckReport rep = run_gradcheck_suite(args.seed);
  for (const GradCheckEntry& e : rep.entries)
    std::printf("%-16s max_rel %.3e\n", e.op.c_str(), e.max_rel_err);
  std::printf("worst %.3e\n", rep.worst);
  if (!rep.ok()) fail_numeric("gradient check exceeded tolerance: worst " + fmt_g17(rep.worst));
  return 0;
}

}  // namespace dmt
