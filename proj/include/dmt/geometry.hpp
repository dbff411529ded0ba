#pragma once

#include <array>
#include <cstdint>

#include "dmt/common.hpp"

namespace dmt {

// Oriented 3D box, yaw-only (rotation about +z). Size is stored as (h, w, l):
// h along z, w along local y, l along local x.
struct Box3D {
  Vec3 center;
  double h = 1.0, w = 1.0, l = 1.0;
  double yaw = 0.0;

  Vec3 size() const { return {h, w, l}; }
  double volume() const { return h * w * l; }
};

// Maps any angle to (-pi, pi].
double normalize_angle(double a);

// Throws DmtError(Data) if sizes are non-positive or any field is non-finite.
// Returns the box with yaw normalized to (-pi, pi].
Box3D make_box(const Vec3& center, double h, double w, double l, double yaw);

// Corner order is fixed by the sign bit-pattern of the index: bit0 -> local x
// (+l/2 when set), bit1 -> local y (+w/2), bit2 -> local z (+h/2); a clear bit
// means the negative half-extent. The order never changes between calls.
std::array<Vec3, 8> corners(const Box3D& box);

// Row i holds the distances from point i to the 8 corners (in `corners` order)
// followed by the distance to the center.
BoxCloudCoords box_cloud(const PointCloud& cloud, const Box3D& box);

// True box cloud row for a single point.
BoxCloudRow box_cloud_row(const Vec3& p, const std::array<Vec3, 8>& cs, const Vec3& center);

// Rotated-box IoU: convex clipping of the two yaw-rotated XY rectangles times
// vertical overlap. Returns 0 when the union is empty.
double iou_3d(const Box3D& a, const Box3D& b);

// Inclusive point-membership mask (boundary counts as inside).
std::vector<std::uint8_t> points_in_box(const PointCloud& cloud, const Box3D& box);
bool point_in_box(const Vec3& p, const Box3D& box);

// Express `p` in the box frame (box becomes axis-aligned at the origin) and
// back. from_box_frame(to_box_frame(p)) round-trips within 1e-9.
Vec3 to_box_frame(const Vec3& p, const Box3D& box);
Vec3 from_box_frame(const Vec3& p, const Box3D& box);
PointCloud to_box_frame(const PointCloud& cloud, const Box3D& box);
PointCloud from_box_frame(const PointCloud& cloud, const Box3D& box);

// Grows every extent by 2*margin; center and yaw unchanged.
Box3D enlarge(const Box3D& box, double margin);

// Exactly n points: subsample without replacement when N >= n, with
// replacement otherwise. Throws DmtError(Data, "empty cloud") when N == 0.
PointCloud resample(const PointCloud& cloud, int n, std::uint64_t seed);

// Area of the convex intersection of two yaw-rotated rectangles in the XY
// plane (exposed for the synthetic-data visibility oracle and tests).
double rotated_rect_intersection_area(const Box3D& a, const Box3D& b);

}  // namespace dmt
