#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidarshape {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Point3 operator-() const { return {-x, -y, -z}; }
  constexpr Point3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr bool operator==(const Point3&) const = default;

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline constexpr Point3 operator*(double s, const Point3& p) { return p * s; }
inline constexpr double dot(const Point3& a, const Point3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline constexpr Point3 cross(const Point3& a, const Point3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Point3& p) { return std::sqrt(dot(p, p)); }
inline double distance(const Point3& a, const Point3& b) { return norm(a - b); }

inline Point3 normalized(const Point3& p) {
  const double n = norm(p);
  if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
  return p * (1.0 / n);
}

enum class Frame { Sensor, Canonical };

inline const char* frame_name(Frame f) { return f == Frame::Sensor ? "sensor" : "canonical"; }

struct PointCloud {
  std::vector<Point3> points;
  Frame frame = Frame::Sensor;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool operator==(const PointCloud&) const = default;
};

inline void require_non_empty(const PointCloud& cloud) {
  if (cloud.empty()) throw std::invalid_argument("empty cloud");
}

inline void require_finite(const PointCloud& cloud) {
  for (const auto& p : cloud.points)
    if (!p.finite()) throw std::invalid_argument("non-finite point in cloud");
}

/// Wraps an angle into [0, 2*pi).
inline double normalize_angle(double rad) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(rad, two_pi);
  if (a < 0.0) a += two_pi;
  // fmod of a tiny negative value can round up to exactly 2*pi
  if (a >= two_pi) a = 0.0;
  return a;
}

/// Yaw-only rigid transform. Maps the Canonical frame of a vehicle into the
/// Sensor frame: p_sensor = Rz(yaw) * p_canonical + t.
class PlanarPose {
 public:
  PlanarPose() = default;
  PlanarPose(double yaw, double tx, double ty, double tz = 0.0)
      : yaw_(normalize_angle(yaw)), tx_(tx), ty_(ty), tz_(tz) {
    if (!std::isfinite(yaw) || !std::isfinite(tx) || !std::isfinite(ty) || !std::isfinite(tz))
      throw std::invalid_argument("non-finite pose");
  }

  static PlanarPose identity() { return {}; }

  double yaw() const { return yaw_; }
  double tx() const { return tx_; }
  double ty() const { return ty_; }
  double tz() const { return tz_; }

  Point3 apply(const Point3& p) const {
    const double c = std::cos(yaw_);
    const double s = std::sin(yaw_);
    return {c * p.x - s * p.y + tx_, s * p.x + c * p.y + ty_, p.z + tz_};
  }

  bool operator==(const PlanarPose&) const = default;

 private:
  double yaw_ = 0.0;
  double tx_ = 0.0;
  double ty_ = 0.0;
  double tz_ = 0.0;
};

inline PointCloud transform_cloud(const PointCloud& cloud, const PlanarPose& pose) {
  require_non_empty(cloud);
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(pose.apply(p));
  return out;
}

inline PlanarPose inverse_pose(const PlanarPose& pose) {
  // R^T (p - t): rotation by -yaw, translation -R^T t
  const double c = std::cos(pose.yaw());
  const double s = std::sin(pose.yaw());
  const double tx = -(c * pose.tx() + s * pose.ty());
  const double ty = -(-s * pose.tx() + c * pose.ty());
  return {-pose.yaw(), tx, ty, -pose.tz()};
}

/// Returns the pose equivalent to applying b first, then a.
inline PlanarPose compose_pose(const PlanarPose& a, const PlanarPose& b) {
  const double c = std::cos(a.yaw());
  const double s = std::sin(a.yaw());
  return {a.yaw() + b.yaw(), c * b.tx() - s * b.ty() + a.tx(), s * b.tx() + c * b.ty() + a.ty(),
          a.tz() + b.tz()};
}

/// Smallest absolute angular difference, in degrees, within [0, 180].
inline double heading_error(double est_rad, double gt_rad) {
  const double delta = normalize_angle(est_rad - gt_rad);
  const double wrapped = std::min(delta, 2.0 * std::numbers::pi - delta);
  return wrapped * 180.0 / std::numbers::pi;
}

/// Euclidean distance between translations in the ground plane.
inline double translation_error(const PlanarPose& est, const PlanarPose& gt) {
  return std::hypot(est.tx() - gt.tx(), est.ty() - gt.ty());
}

struct BoundingBox {
  Point3 min;
  Point3 max;

  Point3 center() const { return (min + max) * 0.5; }
  Point3 extent() const { return max - min; }
  double diagonal() const { return norm(max - min); }
};

inline BoundingBox bounding_box(const std::vector<Point3>& pts) {
  if (pts.empty()) throw std::invalid_argument("bounding box of empty point set");
  BoundingBox box{pts.front(), pts.front()};
  for (const auto& p : pts) {
    box.min = {std::min(box.min.x, p.x), std::min(box.min.y, p.y), std::min(box.min.z, p.z)};
    box.max = {std::max(box.max.x, p.x), std::max(box.max.y, p.y), std::max(box.max.z, p.z)};
  }
  return box;
}

using TriangleIndices = std::array<std::uint32_t, 3>;

struct Triangle {
  Point3 a;
  Point3 b;
  Point3 c;

  double area() const { return 0.5 * norm(cross(b - a, c - a)); }
};

/// Indexed triangle mesh. Construction validates indices and drops
/// zero-area triangles.
class TriMesh {
 public:
  TriMesh() = default;
  TriMesh(std::vector<Point3> vertices, std::vector<TriangleIndices> triangles)
      : vertices_(std::move(vertices)) {
    for (const auto& v : vertices_)
      if (!v.finite()) throw std::invalid_argument("non-finite mesh vertex");
    triangles_.reserve(triangles.size());
    for (const auto& t : triangles) {
      for (auto idx : t)
        if (idx >= vertices_.size())
          throw std::out_of_range("triangle index " + std::to_string(idx) + " out of range (" +
                                  std::to_string(vertices_.size()) + " vertices)");
      if (triangle_at(t).area() > kDegenerateArea) triangles_.push_back(t);
    }
  }

  const std::vector<Point3>& vertices() const { return vertices_; }
  const std::vector<TriangleIndices>& triangles() const { return triangles_; }
  bool empty() const { return triangles_.empty(); }

  Triangle triangle(std::size_t i) const { return triangle_at(triangles_.at(i)); }

  double total_area() const {
    double a = 0.0;
    for (const auto& t : triangles_) a += triangle_at(t).area();
    return a;
  }

  BoundingBox bounds() const { return bounding_box(vertices_); }

  TriMesh transformed(const PlanarPose& pose) const {
    TriMesh out;
    out.vertices_.reserve(vertices_.size());
    for (const auto& v : vertices_) out.vertices_.push_back(pose.apply(v));
    out.triangles_ = triangles_;
    return out;
  }

  static constexpr double kDegenerateArea = 1e-12;

 private:
  Triangle triangle_at(const TriangleIndices& t) const {
    return {vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]};
  }

  std::vector<Point3> vertices_;
  std::vector<TriangleIndices> triangles_;
};

}  // namespace lidarshape
