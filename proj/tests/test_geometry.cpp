#include "dmt/geometry.hpp"

#include <cstring>
#include <set>

#include "doctest.h"
#include "dmt/rng.hpp"
#include "oracles.hpp"

using namespace dmt;

namespace {
Box3D unit_cube() { return make_box({0, 0, 0}, 1, 1, 1, 0); }
}  // namespace

TEST_CASE("corners: axis-aligned unit cube") {
  const auto cs = corners(unit_cube());
  for (int i = 0; i < 8; ++i) {
    CHECK(cs[i].x == doctest::Approx((i & 1) ? 0.5 : -0.5));
    CHECK(cs[i].y == doctest::Approx((i & 2) ? 0.5 : -0.5));
    CHECK(cs[i].z == doctest::Approx((i & 4) ? 0.5 : -0.5));
  }
}

TEST_CASE("corners: yaw pi/2 permutes the corner set of a cube") {
  const auto a = corners(unit_cube());
  const auto b = corners(make_box({0, 0, 0}, 1, 1, 1, 1.5707963267948966));
  auto key = [](const Vec3& v) {
    return std::array<long long, 3>{llround(v.x * 1e6), llround(v.y * 1e6), llround(v.z * 1e6)};
  };
  std::set<std::array<long long, 3>> sa, sb;
  for (int i = 0; i < 8; ++i) {
    sa.insert(key(a[i]));
    sb.insert(key(b[i]));
  }
  CHECK(sa == sb);
}

TEST_CASE("corners: corner 0 of (h,w,l)=(2,1,4) at center (1,0,0)") {
  const auto cs = corners(make_box({1, 0, 0}, 2, 1, 4, 0));
  CHECK(cs[0].x == doctest::Approx(-1.0));
  CHECK(cs[0].y == doctest::Approx(-0.5));
  CHECK(cs[0].z == doctest::Approx(-1.0));
}

TEST_CASE("corners: byte-identical across calls") {
  const Box3D b = make_box({0.3, -1.2, 0.7}, 1.3, 0.8, 2.9, 0.43);
  const auto c1 = corners(b);
  const auto c2 = corners(b);
  CHECK(std::memcmp(c1.data(), c2.data(), sizeof(c1)) == 0);
}

TEST_CASE("box_cloud: point at center") {
  const Box3D b = make_box({0, 0, 0}, 2, 1, 4, 0.3);
  const auto bc = box_cloud({{0, 0, 0}}, b);
  REQUIRE(bc.size() == 1);
  const double half_diag = 0.5 * std::sqrt(2. * 2 + 1 + 4. * 4);
  for (int j = 0; j < 8; ++j) CHECK(bc[0][j] == doctest::Approx(half_diag));
  CHECK(bc[0][8] == doctest::Approx(0.0));
}

TEST_CASE("box_cloud: point at corner 0 of unit cube") {
  const auto bc = box_cloud({{-0.5, -0.5, -0.5}}, unit_cube());
  CHECK(bc[0][0] == doctest::Approx(0.0));
  CHECK(bc[0][8] == doctest::Approx(std::sqrt(3.0) / 2.0));
}

TEST_CASE("box_cloud: matches direct per-corner recomputation") {
  Rng rng(101);
  for (int it = 0; it < 50; ++it) {
    const Box3D b = oracle::random_box(rng, {0, 0, 0}, 2.0);
    const Vec3 p{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
    const auto bc = box_cloud({p}, b);
    const auto cs = corners(b);
    for (int j = 0; j < 8; ++j) {
      const double d = std::sqrt((p.x - cs[j].x) * (p.x - cs[j].x) + (p.y - cs[j].y) * (p.y - cs[j].y) +
                                 (p.z - cs[j].z) * (p.z - cs[j].z));
      CHECK(bc[0][j] == doctest::Approx(d).epsilon(1e-12));
    }
    CHECK(bc[0][8] == doctest::Approx((p - b.center).norm()).epsilon(1e-12));
  }
}

TEST_CASE("box_cloud: rigid-motion invariant") {
  Rng rng(77);
  for (int it = 0; it < 20; ++it) {
    const Box3D b = oracle::random_box(rng, {0, 0, 0}, 1.0);
    PointCloud cloud;
    for (int i = 0; i < 30; ++i)
      cloud.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
    const auto before = box_cloud(cloud, b);

    const double dyaw = rng.uniform(-1.5, 1.5);
    const Vec3 t{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const double c = std::cos(dyaw), s = std::sin(dyaw);
    auto move = [&](const Vec3& p) { return Vec3{c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y, p.z + t.z}; };
    PointCloud moved;
    for (const Vec3& p : cloud) moved.push_back(move(p));
    const Box3D mb = make_box(move(b.center), b.h, b.w, b.l, b.yaw + dyaw);

    const auto after = box_cloud(moved, mb);
    for (size_t i = 0; i < cloud.size(); ++i)
      for (int j = 0; j < 9; ++j) CHECK(std::abs(before[i][j] - after[i][j]) <= 1e-9);
  }
}

TEST_CASE("iou_3d: identical boxes") {
  const Box3D b = make_box({1, 2, 3}, 2, 1, 4, 0.7);
  CHECK(iou_3d(b, b) == doctest::Approx(1.0));
}

TEST_CASE("iou_3d: unit cubes offset by 0.5 along x") {
  CHECK(iou_3d(unit_cube(), make_box({0.5, 0, 0}, 1, 1, 1, 0)) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("iou_3d: concentric cubes at yaw 0 and pi/4") {
  const double got = iou_3d(unit_cube(), make_box({0, 0, 0}, 1, 1, 1, 0.78539816339744831));
  // Octagonal overlap: area 2(sqrt(2)-1), so IoU = that over (2 - that).
  const double inter = 2.0 * (std::sqrt(2.0) - 1.0);
  CHECK(got == doctest::Approx(inter / (2.0 - inter)).epsilon(1e-9));
  CHECK(got == doctest::Approx(0.7071).epsilon(1e-3));
}

TEST_CASE("iou_3d: disjoint and touching boxes") {
  CHECK(iou_3d(unit_cube(), make_box({5, 0, 0}, 1, 1, 1, 0)) == 0.0);
  CHECK(iou_3d(unit_cube(), make_box({1.0, 0, 0}, 1, 1, 1, 0)) == 0.0);  // face contact
}

TEST_CASE("iou_3d: symmetric to argument order") {
  Rng rng(2024);
  for (int it = 0; it < 200; ++it) {
    const Box3D a = oracle::random_box(rng, {0, 0, 0}, 1.2);
    const Box3D b = oracle::random_box(rng, {0, 0, 0}, 1.2);
    CHECK(std::abs(iou_3d(a, b) - iou_3d(b, a)) <= 1e-12);
  }
}

TEST_CASE("iou_3d: agrees with Monte Carlo volume oracle") {
  Rng rng(555);
  for (int it = 0; it < 20; ++it) {
    const Box3D a = oracle::random_box(rng, {0, 0, 0}, 1.0);
    const Box3D b = oracle::random_box(rng, {0, 0, 0}, 1.0);
    const double exact = iou_3d(a, b);
    const double mc = oracle::mc_iou(a, b, 200000, derive_seed(9000, it));
    CHECK(std::abs(exact - mc) <= 0.012);
  }
}

TEST_CASE("points_in_box: center and just-outside point") {
  const Box3D b = make_box({1, 1, 0}, 2, 1, 4, 0.9);
  CHECK(point_in_box(b.center, b));
  const Vec3 outside = from_box_frame({0.5 * b.l + 1e-6, 0, 0}, b);
  CHECK(!point_in_box(outside, b));
  const Vec3 boundary = from_box_frame({0.5 * b.l, 0, 0}, b);
  CHECK(point_in_box(boundary, b));  // inclusive
}

TEST_CASE("points_in_box: matches plane-based oracle") {
  Rng rng(31);
  for (int it = 0; it < 20; ++it) {
    const Box3D b = oracle::random_box(rng, {0, 0, 0}, 1.0);
    PointCloud cloud;
    for (int i = 0; i < 200; ++i)
      cloud.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
    const auto mask = points_in_box(cloud, b);
    int mismatches = 0;
    for (size_t i = 0; i < cloud.size(); ++i) {
      if ((mask[i] != 0) != oracle::point_in_box_via_planes(cloud[i], b)) ++mismatches;
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("to_box_frame: box center maps to origin, corner 0 to -half extents") {
  const Box3D b = make_box({2, -1, 3}, 2, 1, 4, 1.1);
  const Vec3 o = to_box_frame(b.center, b);
  CHECK(o.norm() <= 1e-12);
  const Vec3 c0 = to_box_frame(corners(b)[0], b);
  CHECK(c0.x == doctest::Approx(-2.0));
  CHECK(c0.y == doctest::Approx(-0.5));
  CHECK(c0.z == doctest::Approx(-1.0));
}

TEST_CASE("to/from_box_frame: round trip within 1e-9") {
  Rng rng(88);
  const Box3D b = oracle::random_box(rng, {1, 2, 0}, 1.0);
  PointCloud cloud;
  for (int i = 0; i < 500; ++i)
    cloud.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)});
  const PointCloud back = from_box_frame(to_box_frame(cloud, b), b);
  for (size_t i = 0; i < cloud.size(); ++i) CHECK((back[i] - cloud[i]).norm() <= 1e-9);
}

TEST_CASE("enlarge") {
  const Box3D e = enlarge(unit_cube(), 2.0);
  CHECK(e.h == doctest::Approx(5.0));
  CHECK(e.w == doctest::Approx(5.0));
  CHECK(e.l == doctest::Approx(5.0));
  const Box3D same = enlarge(unit_cube(), 0.0);
  CHECK(same.h == doctest::Approx(1.0));
  const Box3D g = enlarge(make_box({0, 0, 0}, 2, 1, 4, 0.2), 0.5);
  CHECK(g.h == doctest::Approx(3.0));
  CHECK(g.w == doctest::Approx(2.0));
  CHECK(g.l == doctest::Approx(5.0));
  CHECK(g.yaw == doctest::Approx(0.2));
}

TEST_CASE("resample: N == n is a permutation") {
  PointCloud cloud;
  for (int i = 0; i < 16; ++i) cloud.push_back({double(i), 0, 0});
  const PointCloud out = resample(cloud, 16, 42);
  REQUIRE(out.size() == 16);
  std::set<double> xs;
  for (const Vec3& p : out) xs.insert(p.x);
  CHECK(xs.size() == 16);
}

TEST_CASE("resample: single point repeats; empty fails; deterministic") {
  const PointCloud one = {{1, 2, 3}};
  const PointCloud out = resample(one, 4, 7);
  REQUIRE(out.size() == 4);
  for (const Vec3& p : out) CHECK((p - one[0]).norm() == 0.0);

  CHECK_THROWS_AS(resample({}, 4, 7), DmtError);

  PointCloud cloud;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) cloud.push_back(rng.normal_vec3(1.0));
  const PointCloud a = resample(cloud, 32, 99);
  const PointCloud b = resample(cloud, 32, 99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK((a[i] - b[i]).norm() == 0.0);
}

TEST_CASE("normalize_angle and make_box validation") {
  CHECK(normalize_angle(3.5 * 3.14159265358979323846) == doctest::Approx(-0.5 * 3.14159265358979323846));
  CHECK(normalize_angle(-3.14159265358979323846) == doctest::Approx(3.14159265358979323846));
  CHECK_THROWS_AS(make_box({0, 0, 0}, 0, 1, 1, 0), DmtError);
  CHECK_THROWS_AS(make_box({0, 0, 0}, 1, -1, 1, 0), DmtError);
  const double nan = std::nan("");
  CHECK_THROWS_AS(make_box({nan, 0, 0}, 1, 1, 1, 0), DmtError);
}
