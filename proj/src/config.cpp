#include "dmt/config.hpp"

#include <cctype>
#include <cmath>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace dmt {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const char* begin = v.data();
  const char* end = begin + v.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end)
    fail_usage("config key '" + key + "': not an integer: " + v);
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) fail_usage("config key '" + key + "': not a number: " + v);
    return out;
  } catch (const std::invalid_argument&) {
    fail_usage("config key '" + key + "': not a number: " + v);
  } catch (const std::out_of_range&) {
    fail_usage("config key '" + key + "': out of representable range: " + v);
  }
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* begin = v.data();
  const char* end = begin + v.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc{} || ptr != end)
    fail_usage("config key '" + key + "': not an unsigned integer: " + v);
  return out;
}

struct KeyDesc {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
};

void check_range_int(const std::string& key, long long v, long long lo, long long hi) {
  if (v < lo || v > hi)
    fail_usage("config key '" + key + "' out of range [" + std::to_string(lo) + ", " +
               std::to_string(hi) + "]: " + std::to_string(v));
}

void check_range_real(const std::string& key, double v, double lo, double hi, bool lo_strict,
                      bool hi_strict) {
  const bool low_bad = lo_strict ? !(v > lo) : !(v >= lo);
  const bool high_bad = hi_strict ? !(v < hi) : !(v <= hi);
  if (low_bad || high_bad) {
    std::ostringstream os;
    os << "config key '" << key << "' out of range " << (lo_strict ? "(" : "[") << lo << ", "
       << hi << (hi_strict ? ")" : "]") << ": " << v;
    fail_usage(os.str());
  }
}

std::vector<KeyDesc> build_schema() {
  std::vector<KeyDesc> schema;
  auto int_key = [&](const char* name, long long lo, long long hi, int RunConfig::* field) {
    schema.push_back({name, [=](RunConfig& rc, const std::string& v) {
                        const long long x = parse_int(name, v);
                        check_range_int(name, x, lo, hi);
                        rc.*field = static_cast<int>(x);
                      }});
  };
  auto real_key = [&](const char* name, double lo, double hi, bool lo_strict, bool hi_strict,
                      double RunConfig::* field) {
    schema.push_back({name, [=](RunConfig& rc, const std::string& v) {
                        const double x = parse_real(name, v);
                        check_range_real(name, x, lo, hi, lo_strict, hi_strict);
                        rc.*field = x;
                      }});
  };

  schema.push_back({"pattern", [](RunConfig& rc, const std::string& v) {
                      if (v != "mixed") parse_motion_pattern(v);  // throws on junk
                      rc.pattern = v;
                    }});
  int_key("frames", 2, 100000, &RunConfig::frames);
  real_key("density", 0.0, 1e6, true, false, &RunConfig::density);
  real_key("noise", 0.0, 10.0, false, false, &RunConfig::noise);
  real_key("p_drop", 0.0, 1.0, false, true, &RunConfig::p_drop);
  int_key("distractors", 0, 64, &RunConfig::distractors);
  real_key("min_spawn_dist", 0.0, 1000.0, true, false, &RunConfig::min_spawn_dist);
  real_key("box_h", 0.0, 1000.0, true, false, &RunConfig::box_h);
  real_key("box_w", 0.0, 1000.0, true, false, &RunConfig::box_w);
  real_key("box_l", 0.0, 1000.0, true, false, &RunConfig::box_l);

  int_key("c", 2, 1024, &RunConfig::c);
  int_key("k", 1, 1024, &RunConfig::k);
  int_key("group_cap", 1, 4096, &RunConfig::group_cap);
  real_key("radius", 0.0, 100.0, true, false, &RunConfig::radius);
  int_key("m1", 1, 65536, &RunConfig::m1);
  int_key("m2", 1, 65536, &RunConfig::m2);
  int_key("evm_hidden", 1, 65536, &RunConfig::evm_hidden);
  int_key("evm_box_hidden", 1, 65536, &RunConfig::evm_box_hidden);
  int_key("lstm_hidden", 1, 4096, &RunConfig::lstm_hidden);

  int_key("epochs", 1, 1000000, &RunConfig::epochs);
  int_key("batch", 1, 1000000, &RunConfig::batch);
  int_key("epoch_samples", 1, 10000000, &RunConfig::epoch_samples);
  real_key("lr", 0.0, 1.0, true, false, &RunConfig::lr);
  real_key("lr_decay", 0.0, 1.0, true, false, &RunConfig::lr_decay);
  int_key("lr_decay_every", 1, 1000000, &RunConfig::lr_decay_every);
  real_key("alpha", 0.0, 1000.0, false, false, &RunConfig::alpha);
  real_key("beta", 0.0, 1000.0, false, false, &RunConfig::beta);
  real_key("gamma", 0.0, 1000.0, false, false, &RunConfig::gamma);
  int_key("sample_count", 1, 65536, &RunConfig::sample_count);
  real_key("sample_dist", 0.0, 100.0, true, false, &RunConfig::sample_dist);
  real_key("center_jitter", 0.0, 100.0, false, false, &RunConfig::center_jitter);
  int_key("lstm_epochs", 1, 10000000, &RunConfig::lstm_epochs);
  real_key("lstm_lr", 0.0, 1.0, true, false, &RunConfig::lstm_lr);
  int_key("lstm_max_windows", 0, 100000000, &RunConfig::lstm_max_windows);
  int_key("window", 1, 1000, &RunConfig::window);

  real_key("search_margin", 0.0, 1000.0, true, false, &RunConfig::search_margin);
  schema.push_back({"template_strategy", [](RunConfig& rc, const std::string& v) {
                      parse_template_strategy(v);
                      rc.template_strategy = v;
                    }});
  schema.push_back({"mode", [](RunConfig& rc, const std::string& v) {
                      parse_pipeline_mode(v);
                      rc.mode = v;
                    }});
  schema.push_back({"mpm_variant", [](RunConfig& rc, const std::string& v) {
                      parse_mpm_variant(v);
                      rc.mpm_variant = v;
                    }});
  int_key("all_previous_cap", 1, 100000000, &RunConfig::all_previous_cap);
  schema.push_back({"seed", [](RunConfig& rc, const std::string& v) {
                      rc.seed = parse_seed("seed", v);
                    }});
  return schema;
}

}  // namespace

void RunConfig::validate() const {
  if (c % 2 != 0) fail_usage("config key 'c' must be even (the encoder lifts to c/2)");
  if (k > m1 || k > m2) fail_usage("config key 'k' exceeds a point budget");
  if (all_previous_cap < m2) fail_usage("config key 'all_previous_cap' below m2");
  if (batch > epoch_samples)
    fail_usage("config key 'batch' exceeds epoch_samples (no full batch would form)");
}

RunConfig parse_config_text(const std::string& text) {
  static const std::vector<KeyDesc> schema = build_schema();
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail_usage("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      fail_usage("config line " + std::to_string(line_no) + ": expected 'key = value'");
    bool found = false;
    for (const KeyDesc& d : schema) {
      if (d.name == key) {
        d.set(rc, value);
        found = true;
        break;
      }
    }
    if (!found) fail_usage("unknown config key: " + key);
  }
  rc.validate();
  return rc;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) {
    RunConfig rc;
    rc.validate();
    return rc;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_usage("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

BackboneConfig backbone_config(const RunConfig& rc) {
  BackboneConfig bc;
  bc.m1 = rc.m1;
  bc.m2 = rc.m2;
  bc.c = rc.c;
  bc.k = rc.k;
  bc.group_cap = rc.group_cap;
  bc.radius = rc.radius;
  return bc;
}

MpmConfig mpm_config(const RunConfig& rc) {
  MpmConfig mc;
  mc.variant = parse_mpm_variant(rc.mpm_variant);
  mc.window = rc.window;
  return mc;
}

TrackerConfig tracker_config(const RunConfig& rc) {
  TrackerConfig tc;
  tc.search_margin = rc.search_margin;
  tc.strategy = parse_template_strategy(rc.template_strategy);
  tc.mode = parse_pipeline_mode(rc.mode);
  tc.mpm = mpm_config(rc);
  tc.m1 = rc.m1;
  tc.m2 = rc.m2;
  tc.all_previous_cap = rc.all_previous_cap;
  tc.seed = rc.seed;
  return tc;
}

SampleConfig sample_config(const RunConfig& rc) {
  SampleConfig sc;
  sc.search_points = rc.m1;
  sc.template_points = rc.m2;
  sc.search_margin = rc.search_margin;
  sc.center_jitter = rc.center_jitter;
  sc.strategy = parse_template_strategy(rc.template_strategy);
  sc.all_previous_cap = rc.all_previous_cap;
  return sc;
}

SceneConfig scene_config(const RunConfig& rc) {
  SceneConfig sc;
  sc.h = rc.box_h;
  sc.w = rc.box_w;
  sc.l = rc.box_l;
  sc.frames = rc.frames;
  sc.density = rc.density;
  sc.noise = rc.noise;
  sc.p_drop = rc.p_drop;
  sc.distractors = rc.distractors;
  sc.min_spawn_dist = rc.min_spawn_dist;
  return sc;
}

ModelParams make_model(const RunConfig& rc) {
  return ModelParams(backbone_config(rc), rc.evm_hidden, rc.evm_box_hidden, rc.lstm_hidden);
}

std::vector<Tracklet> generate_set(const RunConfig& rc, int count) {
  if (count < 1) fail_usage("tracklet count must be positive");
  constexpr double kPi = 3.14159265358979323846;
  constexpr MotionPattern kPatterns[4] = {MotionPattern::Linear, MotionPattern::PiecewiseAccel,
                                          MotionPattern::SinusoidalYaw, MotionPattern::RandomWalk};
  const bool mixed = rc.pattern == "mixed";

  std::vector<Tracklet> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    SceneConfig sc = scene_config(rc);
    Rng srng(derive_seed(rc.seed, tag("scene"), static_cast<std::uint64_t>(i)));
    sc.pattern = mixed ? kPatterns[srng.uniform_int(0, 3)] : parse_motion_pattern(rc.pattern);

    const double heading = srng.uniform(-kPi, kPi);
    const double speed = srng.uniform(0.1, 0.6);
    sc.velocity = {speed * std::cos(heading), speed * std::sin(heading), 0.0};
    sc.start = {srng.uniform(4.0, 9.0), srng.uniform(-4.0, 4.0),
                sc.h / 2.0 + srng.uniform(0.05, 0.4)};
    sc.start_yaw = srng.uniform(-kPi, kPi);
    sc.amplitude = srng.uniform(0.4, 1.2);
    sc.period = srng.uniform(12.0, 30.0);
    sc.speed = srng.uniform(0.2, 0.6);
    sc.sigma_step = srng.uniform(0.1, 0.3);
    if (sc.pattern == MotionPattern::PiecewiseAccel) {
      sc.segments.clear();
      const int nseg = static_cast<int>(srng.uniform_int(2, 3));
      for (int s = 0; s < nseg; ++s) {
        AccelSegment seg;
        seg.frames = static_cast<int>(srng.uniform_int(5, 12));
        seg.accel = {srng.uniform(-0.06, 0.06), srng.uniform(-0.06, 0.06), 0.0};
        sc.segments.push_back(seg);
      }
    }
    sc.category = motion_pattern_name(sc.pattern);
    out.push_back(generate_tracklet(sc, derive_seed(rc.seed, tag("points"), static_cast<std::uint64_t>(i))));
  }
  return out;
}

}  // namespace dmt
