#include "dmt/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"

namespace dmt {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Sampled surface points sit this far inside the face plane so membership
// tests stay true under the frame-transform round-trip rounding.
constexpr double kSkin = 1e-6;

double norm3(const Vec3& v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }

}  // namespace

const char* motion_pattern_name(MotionPattern p) {
  switch (p) {
    case MotionPattern::Linear: return "linear";
    case MotionPattern::PiecewiseAccel: return "piecewise_accel";
    case MotionPattern::SinusoidalYaw: return "sinusoidal_yaw";
    case MotionPattern::RandomWalk: return "random_walk";
  }
  fail_usage("unknown motion pattern");
}

MotionPattern parse_motion_pattern(const std::string& name) {
  for (MotionPattern p : {MotionPattern::Linear, MotionPattern::PiecewiseAccel,
                          MotionPattern::SinusoidalYaw, MotionPattern::RandomWalk})
    if (name == motion_pattern_name(p)) return p;
  fail_usage("unknown motion pattern: " + name);
}

const char* template_strategy_name(TemplateStrategy s) {
  switch (s) {
    case TemplateStrategy::FirstGT: return "first_gt";
    case TemplateStrategy::Previous: return "previous";
    case TemplateStrategy::FirstAndPrevious: return "first_and_previous";
    case TemplateStrategy::AllPrevious: return "all_previous";
  }
  fail_usage("unknown template strategy");
}

TemplateStrategy parse_template_strategy(const std::string& name) {
  for (TemplateStrategy s : {TemplateStrategy::FirstGT, TemplateStrategy::Previous,
                             TemplateStrategy::FirstAndPrevious, TemplateStrategy::AllPrevious})
    if (name == template_strategy_name(s)) return s;
  fail_usage("unknown template strategy: " + name);
}

void SceneConfig::validate() const {
  if (frames < 2) fail_usage("a tracklet needs at least 2 frames");
  if (!(density > 0.0)) fail_usage("surface density must be positive");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) fail_usage("p_drop must be in [0, 1)");
  if (!(h > 0.0 && w > 0.0 && l > 0.0)) fail_usage("box size must be positive");
  if (!(noise >= 0.0)) fail_usage("sensor noise must be non-negative");
  if (distractors < 0) fail_usage("distractor count must be non-negative");
  if (!(min_spawn_dist > 0.0)) fail_usage("distractor spawn distance must be positive");
  if (pattern == MotionPattern::SinusoidalYaw && !(period > 0.0))
    fail_usage("sinusoid period must be positive");
  if (pattern == MotionPattern::RandomWalk && !(sigma_step >= 0.0))
    fail_usage("random walk step scale must be non-negative");
  for (const AccelSegment& s : segments)
    if (s.frames < 1) fail_usage("acceleration segments need at least 1 frame");
}

std::vector<Box3D> simulate_trajectory(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, tag("traj")));
  std::vector<Vec3> centers(cfg.frames);
  std::vector<double> yaws(cfg.frames, cfg.start_yaw);

  switch (cfg.pattern) {
    case MotionPattern::Linear:
      for (int t = 0; t < cfg.frames; ++t) centers[t] = cfg.start + cfg.velocity * t;
      break;
    case MotionPattern::PiecewiseAccel: {
      Vec3 v = cfg.velocity;
      centers[0] = cfg.start;
      size_t seg = 0;
      int left = cfg.segments.empty() ? 0 : cfg.segments[0].frames;
      for (int t = 1; t < cfg.frames; ++t) {
        while (seg < cfg.segments.size() && left == 0)
          left = (++seg < cfg.segments.size()) ? cfg.segments[seg].frames : 0;
        if (seg < cfg.segments.size()) {
          v += cfg.segments[seg].accel;
          --left;
        }
        centers[t] = centers[t - 1] + v;
      }
      break;
    }
    case MotionPattern::SinusoidalYaw: {
      for (int t = 0; t < cfg.frames; ++t)
        centers[t] =
            cfg.start + Vec3{cfg.speed * t, cfg.amplitude * std::sin(2.0 * kPi * t / cfg.period), 0.0};
      double heading = cfg.start_yaw;
      for (int t = 1; t < cfg.frames; ++t) {
        const Vec3 d = centers[t] - centers[t - 1];
        if (norm3(d) > 1e-12) heading = std::atan2(d.y, d.x);
        yaws[t] = heading;
      }
      if (cfg.frames > 1) yaws[0] = yaws[1];  // the first heading is the first step's
      break;
    }
    case MotionPattern::RandomWalk:
      centers[0] = cfg.start;
      for (int t = 1; t < cfg.frames; ++t)
        centers[t] = centers[t - 1] + Vec3{rng.normal(0.0, cfg.sigma_step),
                                           rng.normal(0.0, cfg.sigma_step), 0.0};
      break;
  }

  std::vector<Box3D> out;
  out.reserve(cfg.frames);
  for (int t = 0; t < cfg.frames; ++t) out.push_back(make_box(centers[t], cfg.h, cfg.w, cfg.l, yaws[t]));
  return out;
}

namespace {

struct Face {
  Vec3 center, tan_u, tan_v, normal;  // local frame, unit tangents
  double eu, ev;                      // half extents along the tangents
};

// Five sensor-relevant faces in a fixed order; the bottom is never sampled.
std::array<Face, 5> box_faces(const Box3D& b) {
  const double hl = 0.5 * b.l, hw = 0.5 * b.w, hh = 0.5 * b.h;
  return {{
      {{+hl, 0, 0}, {0, 1, 0}, {0, 0, 1}, {+1, 0, 0}, hw, hh},
      {{-hl, 0, 0}, {0, 1, 0}, {0, 0, 1}, {-1, 0, 0}, hw, hh},
      {{0, +hw, 0}, {1, 0, 0}, {0, 0, 1}, {0, +1, 0}, hl, hh},
      {{0, -hw, 0}, {1, 0, 0}, {0, 0, 1}, {0, -1, 0}, hl, hh},
      {{0, 0, +hh}, {1, 0, 0}, {0, 1, 0}, {0, 0, +1}, hl, hw},
  }};
}

// A face is seen when its outward normal points back toward the sensor at the
// world origin. When nothing qualifies (sensor inside the box), fall back to
// sampling every face so the frame is never silently empty.
std::array<bool, 5> visible_faces(const Box3D& box) {
  const auto faces = box_faces(box);
  std::array<bool, 5> vis{};
  bool any = false;
  for (size_t f = 0; f < faces.size(); ++f) {
    const Vec3 c_world = from_box_frame(faces[f].center, box);
    const Vec3 n_world = from_box_frame(faces[f].normal, box) - box.center;
    const Vec3 to_sensor = Vec3{0, 0, 0} - c_world;
    vis[f] = to_sensor.x * n_world.x + to_sensor.y * n_world.y + to_sensor.z * n_world.z > 0.0;
    any = any || vis[f];
  }
  if (!any) vis.fill(true);
  return vis;
}

// Surface samples of the box's visible faces. Geometry parameters, sensor
// noise, and dropout draw from separate streams: the geometry stream restarts
// identically every frame, so an unchanged box yields bitwise-identical
// points, while noise and dropout stay independent across frames.
PointCloud sample_box_surface(const Box3D& box, double density, double noise, double p_drop,
                              Rng& geom, Rng& noise_rng, Rng& drop_rng) {
  const auto faces = box_faces(box);
  const auto vis = visible_faces(box);
  // The inset absorbs nearly all of the isotropic displacement, so box
  // membership stays a clean training label instead of a coin flip for
  // points straddling the face plane.
  const double skin = std::max(kSkin, 3.0 * noise);
  PointCloud out;
  for (size_t f = 0; f < faces.size(); ++f) {
    if (!vis[f]) continue;
    const Face& face = faces[f];
    const long n = std::lround(density * 4.0 * face.eu * face.ev);
    const double du = std::max(face.eu - skin, 0.0);
    const double dv = std::max(face.ev - skin, 0.0);
    for (long i = 0; i < n; ++i) {
      const double u = geom.uniform(-du, du);
      const double v = geom.uniform(-dv, dv);
      Vec3 local = face.center - face.normal * skin + face.tan_u * u + face.tan_v * v;
      Vec3 p = from_box_frame(local, box);
      if (noise > 0.0) p += noise_rng.normal_vec3(noise);
      if (p_drop > 0.0 && drop_rng.uniform() < p_drop) continue;
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace

Tracklet generate_tracklet(const SceneConfig& cfg, std::uint64_t seed) {
  const std::vector<Box3D> gt = simulate_trajectory(cfg, seed);

  // Distractors hold formation with the target: a constant world offset drawn
  // outside the spawn clearance. Each gets its own size and heading (a smaller
  // nearby object, bottom on the target's ground plane), so clutter is similar
  // to the target without being an exact copy of it.
  struct DistractorSpec {
    Vec3 offset;
    double h, w, l, yaw;
  };
  Rng spawn_rng(derive_seed(seed, tag("spawn")));
  std::vector<DistractorSpec> distractor_specs;
  for (int d = 0; d < cfg.distractors; ++d) {
    const double ang = spawn_rng.uniform(0.0, 2.0 * kPi);
    const double dist = spawn_rng.uniform(cfg.min_spawn_dist, cfg.min_spawn_dist + 2.0);
    DistractorSpec spec;
    spec.h = cfg.h * spawn_rng.uniform(0.55, 0.9);
    spec.w = cfg.w * spawn_rng.uniform(0.55, 0.9);
    spec.l = cfg.l * spawn_rng.uniform(0.55, 0.9);
    spec.yaw = spawn_rng.uniform(-kPi, kPi);
    spec.offset = {dist * std::cos(ang), dist * std::sin(ang), 0.5 * (spec.h - cfg.h)};
    distractor_specs.push_back(spec);
  }

  Tracklet out;
  out.category = cfg.category;
  out.frames.resize(cfg.frames);
  for (int t = 0; t < cfg.frames; ++t) {
    Rng geom(derive_seed(seed, tag("surface")));  // deliberately frame-independent
    Rng noise_rng(derive_seed(seed, tag("noise"), static_cast<std::uint64_t>(t)));
    Rng drop_rng(derive_seed(seed, tag("drop"), static_cast<std::uint64_t>(t)));

    PointCloud target =
        sample_box_surface(gt[t], cfg.density, cfg.noise, cfg.p_drop, geom, noise_rng, drop_rng);
    if (t == 0 && target.empty()) fail_data("no target points in the first frame");

    PointCloud frame = target;
    for (const Vec3& off : distractor_offsets) {
      const Box3D db = make_box(gt[t].center + off, cfg.h, cfg.w, cfg.l, gt[t].yaw);
      const PointCloud dp =
          sample_box_surface(db, cfg.density, cfg.noise, cfg.p_drop, geom, noise_rng, drop_rng);
      frame.insert(frame.end(), dp.begin(), dp.end());
    }

    const long n_clutter = std::lround(0.1 * static_cast<double>(target.size()));
    for (long i = 0; i < n_clutter; ++i) {
      Vec3 p{gt[t].center.x + geom.uniform(-8.0, 8.0), gt[t].center.y + geom.uniform(-8.0, 8.0),
             0.0};
      if (cfg.noise > 0.0) p += noise_rng.normal_vec3(cfg.noise);
      frame.push_back(p);
    }

    out.frames[t] = {std::move(frame), gt[t]};
  }
  return out;
}

void SampleConfig::validate() const {
  if (search_points < 1 || template_points < 1) fail_usage("point budgets must be positive");
  if (!(search_margin > 0.0)) fail_usage("search margin must be positive");
  if (!(center_jitter >= 0.0)) fail_usage("center jitter must be non-negative");
  if (all_previous_cap < template_points) fail_usage("template buffer cap below template budget");
}

namespace {

PointCloud gather_in_box(const PointCloud& cloud, const Box3D& box) {
  const std::vector<std::uint8_t> mask = points_in_box(cloud, box);
  PointCloud out;
  for (size_t i = 0; i < cloud.size(); ++i)
    if (mask[i]) out.push_back(cloud[i]);
  return out;
}

}  // namespace

std::vector<TrainingSample> make_training_samples(const Tracklet& tracklet,
                                                  const SampleConfig& cfg, std::uint64_t seed,
                                                  int* skipped) {
  cfg.validate();
  if (skipped) *skipped = 0;
  const int t_count = static_cast<int>(tracklet.frames.size());
  std::vector<TrainingSample> out;
  if (t_count < 2) return out;

  Rng rng(derive_seed(seed, tag("samples")));
  const Box3D& gt0 = tracklet.frames[0].gt;
  const PointCloud first_crop =
      to_box_frame(gather_in_box(tracklet.frames[0].points, gt0), gt0);
  const Box3D object_box = make_box({0, 0, 0}, gt0.h, gt0.w, gt0.l, 0.0);

  PointCloud all_buffer = first_crop;

  for (int t = 0; t + 1 < t_count; ++t) {
    const Box3D& prev_gt = tracklet.frames[t].gt;
    const Box3D& next_gt = tracklet.frames[t + 1].gt;
    const Vec3 jitter{rng.uniform(-cfg.center_jitter, cfg.center_jitter),
                      rng.uniform(-cfg.center_jitter, cfg.center_jitter),
                      rng.uniform(-cfg.center_jitter, cfg.center_jitter)};

    PointCloud prev_crop = to_box_frame(gather_in_box(tracklet.frames[t].points, prev_gt), prev_gt);
    if (cfg.strategy == TemplateStrategy::AllPrevious && t > 0) {
      all_buffer.insert(all_buffer.end(), prev_crop.begin(), prev_crop.end());
      if (static_cast<int>(all_buffer.size()) > cfg.all_previous_cap)
        all_buffer = resample(all_buffer, cfg.all_previous_cap,
                              derive_seed(seed, tag("buffer_cap"), t));
    }

    Box3D region = enlarge(prev_gt, cfg.search_margin);
    region.center += jitter;
    const PointCloud search_world = gather_in_box(tracklet.frames[t + 1].points, region);
    if (search_world.empty()) {
      if (skipped) ++*skipped;
      continue;
    }

    PointCloud templ;
    switch (cfg.strategy) {
      case TemplateStrategy::FirstGT: templ = first_crop; break;
      case TemplateStrategy::Previous: templ = prev_crop; break;
      case TemplateStrategy::FirstAndPrevious:
        templ = first_crop;
        templ.insert(templ.end(), prev_crop.begin(), prev_crop.end());
        break;
      case TemplateStrategy::AllPrevious: templ = all_buffer; break;
    }
    if (templ.empty()) {
      if (skipped) ++*skipped;
      continue;
    }

    TrainingSample s;
    s.search_points = resample(to_box_frame(search_world, region), cfg.search_points,
                               derive_seed(seed, tag("search_rs"), t));
    s.gt_box = make_box(to_box_frame(next_gt.center, region), next_gt.h, next_gt.w, next_gt.l,
                        normalize_angle(next_gt.yaw - region.yaw));
    const std::vector<std::uint8_t> mask = points_in_box(s.search_points, s.gt_box);
    s.labels.assign(mask.begin(), mask.end());
    s.search_bc = box_cloud(s.search_points, s.gt_box);
    s.template_points =
        resample(templ, cfg.template_points, derive_seed(seed, tag("templ_rs"), t));
    s.template_bc = box_cloud(s.template_points, object_box);
    s.gt_center = s.gt_box.center;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

bool has_gz_suffix(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

void append_f6(std::string& s, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  s += buf;
}

std::string frame_line(std::uint32_t id, std::uint32_t frame, const TrackletFrame& fr,
                       const std::string& category) {
  std::string s = "{\"tracklet_id\":" + std::to_string(id) + ",\"frame\":" + std::to_string(frame) +
                  ",\"box\":[";
  const Box3D& b = fr.gt;
  const double box_vals[7] = {b.center.x, b.center.y, b.center.z, b.h, b.w, b.l, b.yaw};
  for (int i = 0; i < 7; ++i) {
    if (i) s += ',';
    append_f6(s, box_vals[i]);
  }
  s += "],\"points\":[";
  for (size_t i = 0; i < fr.points.size(); ++i) {
    if (i) s += ',';
    s += '[';
    append_f6(s, fr.points[i].x);
    s += ',';
    append_f6(s, fr.points[i].y);
    s += ',';
    append_f6(s, fr.points[i].z);
    s += ']';
  }
  s += "],\"category\":" + nlohmann::json(category).dump() + "}\n";
  return s;
}

[[noreturn]] void fail_line(size_t line_no, const std::string& what) {
  fail_data("line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

void save_tracklets(const std::string& path, const std::vector<Tracklet>& tracklets) {
  const bool gz = has_gz_suffix(path);
  gzFile zf = nullptr;
  std::ofstream of;
  if (gz) {
    zf = gzopen(path.c_str(), "wb");
    if (!zf) fail_data("cannot open for writing: " + path);
  } else {
    of.open(path, std::ios::binary);
    if (!of) fail_data("cannot open for writing: " + path);
  }

  for (size_t id = 0; id < tracklets.size(); ++id) {
    const Tracklet& tr = tracklets[id];
    for (size_t f = 0; f < tr.frames.size(); ++f) {
      const std::string line = frame_line(static_cast<std::uint32_t>(id),
                                          static_cast<std::uint32_t>(f), tr.frames[f], tr.category);
      if (gz) {
        if (gzwrite(zf, line.data(), static_cast<unsigned>(line.size())) !=
            static_cast<int>(line.size())) {
          gzclose(zf);
          fail_data("short write: " + path);
        }
      } else {
        of.write(line.data(), static_cast<std::streamsize>(line.size()));
      }
    }
  }
  if (gz) {
    if (gzclose(zf) != Z_OK) fail_data("close failed: " + path);
  } else {
    of.close();
    if (!of) fail_data("write failed: " + path);
  }
}

namespace {

// Pulls whole lines out of either stream flavor.
struct LineReader {
  std::ifstream* plain = nullptr;
  gzFile zf = nullptr;

  bool next(std::string& line) {
    if (plain) return static_cast<bool>(std::getline(*plain, line));
    line.clear();
    char buf[1 << 16];
    for (;;) {
      if (gzgets(zf, buf, sizeof(buf)) == nullptr) return !line.empty();
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        return true;
      }
    }
  }
};

}  // namespace

std::vector<Tracklet> load_tracklets(const std::string& path) {
  const bool gz = has_gz_suffix(path);
  std::ifstream plain;
  gzFile zf = nullptr;
  LineReader reader;
  if (gz) {
    zf = gzopen(path.c_str(), "rb");
    if (!zf) fail_data("cannot open: " + path);
    reader.zf = zf;
  } else {
    plain.open(path, std::ios::binary);
    if (!plain) fail_data("cannot open: " + path);
    reader.plain = &plain;
  }

  std::map<std::uint32_t, Tracklet> by_id;
  std::string line;
  size_t line_no = 0;
  while (reader.next(line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      if (gz) gzclose(zf);
      fail_line(line_no, "malformed record");
    }
    try {
      const std::uint32_t id = j.at("tracklet_id").get<std::uint32_t>();
      const std::uint32_t frame = j.at("frame").get<std::uint32_t>();
      const auto& box = j.at("box");
      if (!box.is_array() || box.size() != 7) fail_line(line_no, "box must have 7 numbers");
      const auto& pts = j.at("points");
      if (!pts.is_array()) fail_line(line_no, "points must be an array");

      Tracklet& tr = by_id[id];
      if (frame != tr.frames.size())
        fail_line(line_no, "frame " + std::to_string(frame) + " out of order for tracklet " +
                               std::to_string(id));
      if (tr.frames.empty() && j.contains("category"))
        tr.category = j.at("category").get<std::string>();

      TrackletFrame fr;
      fr.gt = make_box({box[0].get<double>(), box[1].get<double>(), box[2].get<double>()},
                       box[3].get<double>(), box[4].get<double>(), box[5].get<double>(),
                       box[6].get<double>());
      if (!tr.frames.empty()) {
        const Box3D& first = tr.frames[0].gt;
        if (std::abs(fr.gt.h - first.h) > 1e-9 || std::abs(fr.gt.w - first.w) > 1e-9 ||
            std::abs(fr.gt.l - first.l) > 1e-9)
          fail_line(line_no, "box size changes within tracklet " + std::to_string(id));
      }
      fr.points.reserve(pts.size());
      for (const auto& p : pts) {
        if (!p.is_array() || p.size() != 3) fail_line(line_no, "point must have 3 coordinates");
        fr.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
      }
      tr.frames.push_back(std::move(fr));
    } catch (const nlohmann::json::exception& e) {
      if (gz) gzclose(zf);
      fail_line(line_no, std::string("bad field: ") + e.what());
    } catch (const DmtError&) {
      if (gz) gzclose(zf);
      throw;
    }
  }
  if (gz) gzclose(zf);

  std::vector<Tracklet> out;
  out.reserve(by_id.size());
  for (auto& [id, tr] : by_id) {
    if (tr.frames.size() < 2)
      fail_data("tracklet " + std::to_string(id) + " has fewer than 2 frames");
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<CenterWindow> extract_center_sequences(const std::vector<Tracklet>& tracklets) {
  std::vector<CenterWindow> out;
  for (const Tracklet& tr : tracklets) {
    const int t_count = static_cast<int>(tr.frames.size());
    for (int s = 0; s + 10 < t_count; ++s) {
      CenterWindow w;
      for (int i = 0; i < 10; ++i) w.history[i] = tr.frames[s + i].gt.center;
      w.target = tr.frames[s + 10].gt.center;
      out.push_back(w);
    }
  }
  return out;
}

std::vector<std::vector<Vec3>> center_sequences(const std::vector<Tracklet>& tracklets) {
  std::vector<std::vector<Vec3>> out;
  out.reserve(tracklets.size());
  for (const Tracklet& tr : tracklets) {
    std::vector<Vec3> seq;
    seq.reserve(tr.frames.size());
    for (const TrackletFrame& f : tr.frames) seq.push_back(f.gt.center);
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace dmt
