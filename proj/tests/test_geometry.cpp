#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lidarshape/geometry.hpp"
#include "lidarshape/random.hpp"

using namespace lidarshape;

namespace {

constexpr double kPi = std::numbers::pi;

PlanarPose random_pose(Rng& rng) {
  return {rng.uniform(-10.0, 10.0), rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0), rng.uniform(-3.0, 3.0)};
}

Point3 random_point(Rng& rng) { return {rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)}; }

}  // namespace

TEST(Geometry, NormalizeAngleRange) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-100.0, 100.0);
    const double n = normalize_angle(a);
    EXPECT_GE(n, 0.0);
    EXPECT_LT(n, 2.0 * kPi);
    EXPECT_NEAR(std::cos(n), std::cos(a), 1e-9);
    EXPECT_NEAR(std::sin(n), std::sin(a), 1e-9);
  }
  EXPECT_EQ(normalize_angle(-1e-300), 0.0);
  EXPECT_EQ(normalize_angle(2.0 * kPi), 0.0);
}

TEST(Geometry, PoseRotatesAboutZ) {
  const PlanarPose p(kPi / 2.0, 1.0, 2.0, -2.0);
  const Point3 q = p.apply({1.0, 0.0, 0.5});
  EXPECT_NEAR(q.x, 1.0, 1e-12);
  EXPECT_NEAR(q.y, 3.0, 1e-12);
  EXPECT_NEAR(q.z, -1.5, 1e-12);
}

TEST(Geometry, NonFinitePoseRejected) {
  EXPECT_THROW(PlanarPose(std::nan(""), 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(PlanarPose(0.0, INFINITY, 0.0), std::invalid_argument);
}

TEST(Geometry, InverseRoundTrip) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_pose(rng);
    const auto x = random_point(rng);
    const auto back = inverse_pose(p).apply(p.apply(x));
    EXPECT_NEAR(distance(back, x), 0.0, 1e-9);
  }
}

TEST(Geometry, ComposeAppliesRightThenLeft) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_pose(rng), b = random_pose(rng);
    const auto x = random_point(rng);
    EXPECT_NEAR(distance(compose_pose(a, b).apply(x), a.apply(b.apply(x))), 0.0, 1e-9);
  }
}

TEST(Geometry, TransformCloudKeepsFrameAndCount) {
  PointCloud c{{{1, 2, 3}, {4, 5, 6}}, Frame::Canonical};
  const auto t = transform_cloud(c, PlanarPose(0.3, 1.0, 1.0));
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.frame, Frame::Canonical);
}

TEST(Geometry, HeadingErrorWrapsAround) {
  EXPECT_NEAR(heading_error(0.1, 2.0 * kPi - 0.1), 0.2 * 180.0 / kPi, 1e-9);
  EXPECT_NEAR(heading_error(kPi, 0.0), 180.0, 1e-9);
  EXPECT_NEAR(heading_error(1.0, 1.0), 0.0, 0.0);
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(-20.0, 20.0), b = rng.uniform(-20.0, 20.0);
    const double e = heading_error(a, b);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 180.0);
    EXPECT_NEAR(e, heading_error(b, a), 1e-9);
  }
}

TEST(Geometry, TranslationErrorIgnoresHeight) {
  EXPECT_DOUBLE_EQ(translation_error(PlanarPose(0.0, 3.0, 4.0, 5.0), PlanarPose(1.0, 0.0, 0.0, -2.0)), 5.0);
}

TEST(Geometry, TriangleArea) {
  const Triangle t{{0, 0, 0}, {2, 0, 0}, {0, 3, 0}};
  EXPECT_DOUBLE_EQ(t.area(), 3.0);
}

TEST(Geometry, MeshValidatesIndicesAndDropsDegenerates) {
  std::vector<Point3> v{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {2, 0, 0}};
  EXPECT_THROW(TriMesh(v, {{0, 1, 7}}), std::out_of_range);
  const TriMesh m(v, {{0, 1, 2}, {0, 1, 3}});
  EXPECT_EQ(m.triangles().size(), 1u);
  EXPECT_DOUBLE_EQ(m.total_area(), 0.5);
}

TEST(Geometry, BoundingBox) {
  const auto b = bounding_box({{-1, 2, 0}, {3, -4, 5}});
  EXPECT_EQ(b.min, (Point3{-1, -4, 0}));
  EXPECT_EQ(b.max, (Point3{3, 2, 5}));
  EXPECT_EQ(b.center(), (Point3{1, -1, 2.5}));
  EXPECT_THROW(bounding_box({}), std::invalid_argument);
}

TEST(Geometry, EmptyCloudRejected) {
  EXPECT_THROW(require_non_empty(PointCloud{}), std::invalid_argument);
  PointCloud bad{{{0, 0, NAN}}, Frame::Sensor};
  EXPECT_THROW(require_finite(bad), std::invalid_argument);
}
