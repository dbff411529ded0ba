#include "dmt/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "dmt/rng.hpp"

namespace dmt {

namespace {

constexpr double kPi = 3.14159265358979323846;
// Clipped polygon vertices closer than this are merged so touching rectangles
// produce area 0 instead of numerical noise.
constexpr double kVertexMergeTol = 1e-9;

struct Pt2 {
  double x, y;
};

double cross2(const Pt2& o, const Pt2& a, const Pt2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Sutherland-Hodgman: clip `poly` against the half-plane left of edge a->b.
std::vector<Pt2> clip_edge(const std::vector<Pt2>& poly, const Pt2& a, const Pt2& b) {
  std::vector<Pt2> out;
  out.reserve(poly.size() + 1);
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Pt2& cur = poly[i];
    const Pt2& nxt = poly[(i + 1) % n];
    const double dc = cross2(a, b, cur);
    const double dn = cross2(a, b, nxt);
    if (dc >= 0.0) out.push_back(cur);
    if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

std::vector<Pt2> merge_close_vertices(const std::vector<Pt2>& poly) {
  std::vector<Pt2> out;
  for (const Pt2& p : poly) {
    if (!out.empty()) {
      const Pt2& q = out.back();
      if (std::abs(p.x - q.x) <= kVertexMergeTol && std::abs(p.y - q.y) <= kVertexMergeTol) continue;
    }
    out.push_back(p);
  }
  while (out.size() > 1 && std::abs(out.front().x - out.back().x) <= kVertexMergeTol &&
         std::abs(out.front().y - out.back().y) <= kVertexMergeTol) {
    out.pop_back();
  }
  return out;
}

double polygon_area(const std::vector<Pt2>& poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Pt2& a = poly[i];
    const Pt2& b = poly[(i + 1) % poly.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(s);
}

// CCW footprint of the box in the XY plane.
std::vector<Pt2> footprint(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.l, hw = 0.5 * box.w;
  std::vector<Pt2> out(4);
  const double lx[4] = {+hl, -hl, -hl, +hl};
  const double ly[4] = {+hw, +hw, -hw, -hw};
  for (int i = 0; i < 4; ++i) {
    out[i] = {box.center.x + c * lx[i] - s * ly[i], box.center.y + s * lx[i] + c * ly[i]};
  }
  return out;
}

}  // namespace

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

Box3D make_box(const Vec3& center, double h, double w, double l, double yaw) {
  if (!(h > 0.0) || !(w > 0.0) || !(l > 0.0) || !std::isfinite(h) || !std::isfinite(w) ||
      !std::isfinite(l)) {
    fail_data("box size must be positive and finite");
  }
  if (!center.finite() || !std::isfinite(yaw)) fail_data("box pose must be finite");
  Box3D b;
  b.center = center;
  b.h = h;
  b.w = w;
  b.l = l;
  b.yaw = normalize_angle(yaw);
  return b;
}

std::array<Vec3, 8> corners(const Box3D& box) {
  std::array<Vec3, 8> out;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  for (int i = 0; i < 8; ++i) {
    const double lx = (i & 1) ? 0.5 * box.l : -0.5 * box.l;
    const double ly = (i & 2) ? 0.5 * box.w : -0.5 * box.w;
    const double lz = (i & 4) ? 0.5 * box.h : -0.5 * box.h;
    out[i] = {box.center.x + c * lx - s * ly, box.center.y + s * lx + c * ly, box.center.z + lz};
  }
  return out;
}

BoxCloudRow box_cloud_row(const Vec3& p, const std::array<Vec3, 8>& cs, const Vec3& center) {
  BoxCloudRow row;
  for (int j = 0; j < 8; ++j) row[j] = (p - cs[j]).norm();
  row[8] = (p - center).norm();
  return row;
}

BoxCloudCoords box_cloud(const PointCloud& cloud, const Box3D& box) {
  const std::array<Vec3, 8> cs = corners(box);
  BoxCloudCoords out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.push_back(box_cloud_row(p, cs, box.center));
  return out;
}

double rotated_rect_intersection_area(const Box3D& a, const Box3D& b) {
  std::vector<Pt2> poly = footprint(a);
  const std::vector<Pt2> clip = footprint(b);
  for (int e = 0; e < 4 && !poly.empty(); ++e) {
    poly = clip_edge(poly, clip[e], clip[(e + 1) % 4]);
  }
  return polygon_area(merge_close_vertices(poly));
}

double iou_3d(const Box3D& a, const Box3D& b) {
  // Canonical argument order keeps iou_3d(a, b) and iou_3d(b, a) bit-identical
  // even where clipping order would otherwise differ in the last ulp.
  const Box3D* p = &a;
  const Box3D* q = &b;
  auto key = [](const Box3D& x) {
    return std::array<double, 7>{x.center.x, x.center.y, x.center.z, x.h, x.w, x.l, x.yaw};
  };
  if (key(b) < key(a)) std::swap(p, q);

  const double zlo = std::max(p->center.z - 0.5 * p->h, q->center.z - 0.5 * q->h);
  const double zhi = std::min(p->center.z + 0.5 * p->h, q->center.z + 0.5 * q->h);
  const double dz = zhi - zlo;
  if (dz <= 0.0) return 0.0;
  const double inter = rotated_rect_intersection_area(*p, *q) * dz;
  const double uni = p->volume() + q->volume() - inter;
  if (uni <= 0.0) return 0.0;
  const double iou = inter / uni;
  return iou < 0.0 ? 0.0 : (iou > 1.0 ? 1.0 : iou);
}

Vec3 to_box_frame(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Vec3 d = p - box.center;
  return {c * d.x + s * d.y, -s * d.x + c * d.y, d.z};
}

Vec3 from_box_frame(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  return {box.center.x + c * p.x - s * p.y, box.center.y + s * p.x + c * p.y, box.center.z + p.z};
}

PointCloud to_box_frame(const PointCloud& cloud, const Box3D& box) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.push_back(to_box_frame(p, box));
  return out;
}

PointCloud from_box_frame(const PointCloud& cloud, const Box3D& box) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud) out.push_back(from_box_frame(p, box));
  return out;
}

bool point_in_box(const Vec3& p, const Box3D& box) {
  const Vec3 q = to_box_frame(p, box);
  return std::abs(q.x) <= 0.5 * box.l && std::abs(q.y) <= 0.5 * box.w && std::abs(q.z) <= 0.5 * box.h;
}

std::vector<std::uint8_t> points_in_box(const PointCloud& cloud, const Box3D& box) {
  std::vector<std::uint8_t> mask(cloud.size(), 0);
  for (size_t i = 0; i < cloud.size(); ++i) mask[i] = point_in_box(cloud[i], box) ? 1 : 0;
  return mask;
}

Box3D enlarge(const Box3D& box, double margin) {
  Box3D out = box;
  out.h += 2.0 * margin;
  out.w += 2.0 * margin;
  out.l += 2.0 * margin;
  return out;
}

PointCloud resample(const PointCloud& cloud, int n, std::uint64_t seed) {
  const int N = static_cast<int>(cloud.size());
  if (N == 0) fail_data("empty cloud");
  Rng rng(seed);
  PointCloud out;
  out.reserve(n);
  if (N >= n) {
    // Partial Fisher-Yates over an index vector: first n entries are a uniform
    // sample without replacement.
    std::vector<int> idx(N);
    for (int i = 0; i < N; ++i) idx[i] = i;
    for (int i = 0; i < n; ++i) {
      const int j = i + static_cast<int>(rng.uniform_int(0, N - 1 - i));
      std::swap(idx[i], idx[j]);
      out.push_back(cloud[idx[i]]);
    }
  } else {
    for (int i = 0; i < n; ++i) out.push_back(cloud[rng.uniform_int(0, N - 1)]);
  }
  return out;
}

}  // namespace dmt
