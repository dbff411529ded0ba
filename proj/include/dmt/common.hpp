#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmt {

// ---------------------------------------------------------------------------
// Small value types shared by every module.
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double squared_norm() const { return dot(*this); }
  double norm() const { return std::sqrt(squared_norm()); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

using PointCloud = std::vector<Vec3>;

// Per-point distances to the 8 box corners plus the center.
using BoxCloudRow = std::array<double, 9>;
using BoxCloudCoords = std::vector<BoxCloudRow>;

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps kinds onto process exit codes, everything else
// just throws and lets the boundary decide.
// ---------------------------------------------------------------------------

enum class ErrorKind : int {
  Usage = 1,    // bad flags, bad config values
  Data = 2,     // malformed or inconsistent input files
  Numeric = 3,  // failed numerical self-check
};

class DmtError : public std::runtime_error {
 public:
  DmtError(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_usage(const std::string& msg) { throw DmtError(ErrorKind::Usage, msg); }
[[noreturn]] inline void fail_data(const std::string& msg) { throw DmtError(ErrorKind::Data, msg); }
[[noreturn]] inline void fail_numeric(const std::string& msg) { throw DmtError(ErrorKind::Numeric, msg); }

// ---------------------------------------------------------------------------
// Seed derivation. Every randomized stage derives its own stream from the run
// seed plus a purpose tag, so adding workers or reordering stages never shifts
// another stage's stream.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed) { return splitmix64(seed); }

template <class... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Rest... rest) {
  return derive_seed(splitmix64(seed ^ (tag + 0x632be59bd9b4e019ull)), rest...);
}

// Stable small-string tag for seed derivation (FNV-1a).
inline std::uint64_t tag(const char* s) {
  std::uint64_t h = 1469598103934665603ull;
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 1099511628211ull;
  return h;
}

}  // namespace dmt
