#pragma once

// Procedural vehicle meshes, ring/azimuth LiDAR ray casting, and exterior
// uniform surface sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarshape/geometry.hpp"
#include "lidarshape/io.hpp"
#include "lidarshape/random.hpp"

namespace lidarshape::sim {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;

// ---------------------------------------------------------------- sensor

struct SensorConfig {
  double height = 2.0;
  std::vector<double> ring_elevations_deg = uniform_rings(32, 10.67, -30.67);
  double azimuth_step_deg = 1.0;
  double azimuth_min_deg = 0.0;
  double azimuth_max_deg = 360.0;
  double max_range = 120.0;
  double range_noise_sigma = 0.0;

  static std::vector<double> uniform_rings(std::size_t count, double top_deg, double bottom_deg) {
    std::vector<double> rings(count);
    for (std::size_t i = 0; i < count; ++i)
      rings[i] = count == 1 ? top_deg : top_deg + (bottom_deg - top_deg) * static_cast<double>(i) /
                                                      static_cast<double>(count - 1);
    return rings;
  }

  std::size_t azimuth_count() const {
    return static_cast<std::size_t>(std::ceil((azimuth_max_deg - azimuth_min_deg) / azimuth_step_deg - 1e-9));
  }

  void validate() const {
    if (ring_elevations_deg.empty() || ring_elevations_deg.size() > 64)
      throw std::invalid_argument("sensor ring count must be in [1, 64]");
    if (!(azimuth_step_deg > 0.0)) throw std::invalid_argument("azimuth step must be positive");
    const double steps = 360.0 / azimuth_step_deg;
    if (std::abs(steps - std::round(steps)) > 1e-9)
      throw std::invalid_argument("azimuth step must divide 360 evenly");
    if (!(azimuth_max_deg > azimuth_min_deg) || azimuth_max_deg - azimuth_min_deg > 360.0 + 1e-9)
      throw std::invalid_argument("azimuth sector must be non-empty and at most 360 degrees");
    if (!(max_range > 0.0)) throw std::invalid_argument("max range must be positive");
    if (!(range_noise_sigma >= 0.0)) throw std::invalid_argument("range noise sigma must be >= 0");
    if (!std::isfinite(height)) throw std::invalid_argument("sensor height must be finite");
  }

  io::KeyValues to_key_values() const {
    io::KeyValues kv;
    kv["sensor.height"] = io::format_real(height);
    std::string rings;
    for (std::size_t i = 0; i < ring_elevations_deg.size(); ++i)
      rings += (i ? "," : "") + io::format_real(ring_elevations_deg[i]);
    kv["sensor.rings_deg"] = rings;
    kv["sensor.azimuth_step_deg"] = io::format_real(azimuth_step_deg);
    kv["sensor.azimuth_min_deg"] = io::format_real(azimuth_min_deg);
    kv["sensor.azimuth_max_deg"] = io::format_real(azimuth_max_deg);
    kv["sensor.max_range"] = io::format_real(max_range);
    kv["sensor.range_noise_sigma"] = io::format_real(range_noise_sigma);
    return kv;
  }

  /// Missing keys keep their defaults.
  static SensorConfig from_key_values(const io::KeyValues& kv) {
    SensorConfig c;
    auto real = [&](const char* key, double& dst) {
      if (auto it = kv.find(key); it != kv.end()) dst = io::parse_real(it->second, key);
    };
    real("sensor.height", c.height);
    real("sensor.azimuth_step_deg", c.azimuth_step_deg);
    real("sensor.azimuth_min_deg", c.azimuth_min_deg);
    real("sensor.azimuth_max_deg", c.azimuth_max_deg);
    real("sensor.max_range", c.max_range);
    real("sensor.range_noise_sigma", c.range_noise_sigma);
    if (auto it = kv.find("sensor.rings_deg"); it != kv.end()) {
      c.ring_elevations_deg.clear();
      std::stringstream ss(it->second);
      std::string tok;
      while (std::getline(ss, tok, ',')) c.ring_elevations_deg.push_back(io::parse_real(tok, "sensor.rings_deg"));
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------- rays

/// Moller-Trumbore. Returns the ray parameter of the hit if it exceeds 1e-6.
inline std::optional<double> ray_triangle_intersect(const Point3& origin, const Point3& dir, const Triangle& tri) {
  const Point3 e1 = tri.b - tri.a;
  const Point3 e2 = tri.c - tri.a;
  const Point3 p = cross(dir, e2);
  const double det = dot(e1, p);
  if (std::abs(det) < 1e-12) return std::nullopt;
  const double inv = 1.0 / det;
  const Point3 s = origin - tri.a;
  const double u = dot(s, p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Point3 q = cross(s, e1);
  const double v = dot(dir, q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = dot(e2, q) * inv;
  if (t > 1e-6) return t;
  return std::nullopt;
}

/// Nearest hit over a triangle soup.
inline std::optional<double> first_hit(const Point3& origin, const Point3& dir, const std::vector<Triangle>& tris) {
  std::optional<double> best;
  for (const auto& tri : tris)
    if (auto t = ray_triangle_intersect(origin, dir, tri); t && (!best || *t < *best)) best = t;
  return best;
}

inline std::vector<Triangle> triangle_soup(const TriMesh& mesh) {
  std::vector<Triangle> tris;
  tris.reserve(mesh.triangles().size());
  for (std::size_t i = 0; i < mesh.triangles().size(); ++i) tris.push_back(mesh.triangle(i));
  return tris;
}

// ---------------------------------------------------------------- placement

struct ScenePlacement {
  PlanarPose pose;
  double range = 0.0;
  double heading = 0.0;
};

/// Vehicle at `range` meters along `bearing`, rotated to `heading`, resting on
/// the ground plane `sensor.height` below the sensor.
inline ScenePlacement make_placement(double range, double bearing, double heading, const SensorConfig& sensor) {
  return {PlanarPose(heading, range * std::cos(bearing), range * std::sin(bearing), -sensor.height), range,
          normalize_angle(heading)};
}

inline ScenePlacement sample_placement(Rng& rng, const SensorConfig& sensor, double min_range = 5.0,
                                       double max_range = 35.0) {
  const double range = rng.uniform(min_range, max_range);
  const double bearing = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return make_placement(range, bearing, heading, sensor);
}

// ---------------------------------------------------------------- scanning

/// Casts one ray per (ring, azimuth) from the sensor origin and returns the
/// first hit on the placed mesh for each ray, in ring-major order.
inline PointCloud scan(const TriMesh& mesh, const ScenePlacement& placement, const SensorConfig& sensor,
                       std::uint64_t noise_seed = 0) {
  if (mesh.empty()) throw std::invalid_argument("scan of empty mesh");
  sensor.validate();
  const TriMesh world = mesh.transformed(placement.pose);
  const auto tris = triangle_soup(world);
  const BoundingBox box = world.bounds();
  const Point3 center = box.center();
  const double radius = 0.5 * box.diagonal() + 1e-9;
  Rng noise(noise_seed);

  PointCloud out;
  out.frame = Frame::Sensor;
  const Point3 origin{0.0, 0.0, 0.0};
  const std::size_t n_az = sensor.azimuth_count();
  for (double elev_deg : sensor.ring_elevations_deg) {
    const double el = elev_deg * kDegToRad;
    for (std::size_t k = 0; k < n_az; ++k) {
      const double az = (sensor.azimuth_min_deg + static_cast<double>(k) * sensor.azimuth_step_deg) * kDegToRad;
      const Point3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      const double along = dot(center, dir);
      if (along < -radius) continue;
      const Point3 off = center - dir * along;
      if (dot(off, off) > radius * radius) continue;
      auto t = first_hit(origin, dir, tris);
      if (!t || *t > sensor.max_range) continue;
      double range = *t;
      if (sensor.range_noise_sigma > 0.0) range += sensor.range_noise_sigma * noise.normal();
      out.points.push_back(dir * range);
    }
  }
  return out;
}

// ---------------------------------------------------------------- vehicles

enum class VehicleClass { Sedan, SUV, Truck, Van, Bus };

inline constexpr VehicleClass kAllClasses[] = {VehicleClass::Sedan, VehicleClass::SUV, VehicleClass::Truck,
                                               VehicleClass::Van, VehicleClass::Bus};

inline const char* class_name(VehicleClass c) {
  switch (c) {
    case VehicleClass::Sedan: return "sedan";
    case VehicleClass::SUV: return "suv";
    case VehicleClass::Truck: return "truck";
    case VehicleClass::Van: return "van";
    case VehicleClass::Bus: return "bus";
  }
  return "unknown";
}

inline VehicleClass parse_class(const std::string& s) {
  for (auto c : kAllClasses)
    if (s == class_name(c)) return c;
  throw std::invalid_argument("unknown vehicle class '" + s + "'");
}

struct Range {
  double lo;
  double hi;
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct DimensionRanges {
  Range length, width, height, cabin_fraction, wheel_radius;
};

inline DimensionRanges class_ranges(VehicleClass c) {
  switch (c) {
    case VehicleClass::Sedan: return {{4.2, 5.0}, {1.70, 1.90}, {1.35, 1.50}, {0.42, 0.52}, {0.30, 0.34}};
    case VehicleClass::SUV: return {{4.4, 5.1}, {1.80, 2.00}, {1.65, 1.90}, {0.50, 0.60}, {0.34, 0.40}};
    case VehicleClass::Truck: return {{5.2, 6.0}, {1.90, 2.10}, {1.75, 1.95}, {0.28, 0.38}, {0.36, 0.42}};
    case VehicleClass::Van: return {{4.8, 5.6}, {1.90, 2.05}, {1.90, 2.30}, {0.70, 0.80}, {0.33, 0.38}};
    case VehicleClass::Bus: return {{10.0, 12.5}, {2.45, 2.55}, {2.90, 3.30}, {0.88, 0.92}, {0.45, 0.50}};
  }
  throw std::invalid_argument("unknown vehicle class");
}

struct VehicleSpec {
  VehicleClass vehicle_class = VehicleClass::Sedan;
  double length = 4.6;
  double width = 1.8;
  double height = 1.42;
  double cabin_fraction = 0.47;
  double wheel_radius = 0.32;
  std::uint64_t seed = 0;

  /// Mid-range dimensions of the class.
  static VehicleSpec defaults(VehicleClass c) {
    const auto r = class_ranges(c);
    return {c, r.length.mid(), r.width.mid(), r.height.mid(), r.cabin_fraction.mid(), r.wheel_radius.mid(), 0};
  }

  /// Dimensions drawn uniformly from the class ranges.
  static VehicleSpec sample(VehicleClass c, std::uint64_t seed) {
    const auto r = class_ranges(c);
    Rng rng(derive_seed(seed, {0x5e1c1e}));
    VehicleSpec s;
    s.vehicle_class = c;
    s.length = rng.uniform(r.length.lo, r.length.hi);
    s.width = rng.uniform(r.width.lo, r.width.hi);
    s.height = rng.uniform(r.height.lo, r.height.hi);
    s.cabin_fraction = rng.uniform(r.cabin_fraction.lo, r.cabin_fraction.hi);
    s.wheel_radius = rng.uniform(r.wheel_radius.lo, r.wheel_radius.hi);
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (!(length > 0 && width > 0 && height > 0 && cabin_fraction > 0 && wheel_radius > 0))
      throw std::invalid_argument("vehicle dimensions must be positive");
    if (!(length > width)) throw std::invalid_argument("vehicle length must exceed width");
    if (!(cabin_fraction < 1.0)) throw std::invalid_argument("cabin fraction must be < 1");
    if (!(2.2 * wheel_radius < height)) throw std::invalid_argument("wheel radius too large for height");
  }

  io::KeyValues to_key_values() const {
    return {{"vehicle.class", class_name(vehicle_class)},
            {"vehicle.length", io::format_real(length)},
            {"vehicle.width", io::format_real(width)},
            {"vehicle.height", io::format_real(height)},
            {"vehicle.cabin_fraction", io::format_real(cabin_fraction)},
            {"vehicle.wheel_radius", io::format_real(wheel_radius)},
            {"vehicle.seed", std::to_string(seed)}};
  }

  /// A class (and optional seed) alone samples the dimensions; explicit
  /// dimension keys then override.
  static VehicleSpec from_key_values(const io::KeyValues& kv) {
    VehicleClass c = VehicleClass::Sedan;
    if (auto it = kv.find("vehicle.class"); it != kv.end()) c = parse_class(it->second);
    std::uint64_t seed = 0;
    if (auto it = kv.find("vehicle.seed"); it != kv.end()) seed = std::stoull(it->second);
    VehicleSpec s = sample(c, seed);
    auto real = [&](const char* key, double& dst) {
      if (auto it = kv.find(key); it != kv.end()) dst = io::parse_real(it->second, key);
    };
    real("vehicle.length", s.length);
    real("vehicle.width", s.width);
    real("vehicle.height", s.height);
    real("vehicle.cabin_fraction", s.cabin_fraction);
    real("vehicle.wheel_radius", s.wheel_radius);
    s.validate();
    return s;
  }
};

namespace detail {

struct Vec2 {
  double x;
  double z;
};

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x);
}

inline double signed_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x * q.z - q.x * p.z;
  }
  return 0.5 * a;
}

/// Drops repeated and collinear vertices.
inline std::vector<Vec2> simplify(std::vector<Vec2> poly) {
  bool changed = true;
  while (changed && poly.size() > 3) {
    changed = false;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const auto& prev = poly[(i + poly.size() - 1) % poly.size()];
      const auto& next = poly[(i + 1) % poly.size()];
      if (std::abs(cross2(prev, poly[i], next)) < 1e-10) {
        poly.erase(poly.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
        break;
      }
    }
  }
  return poly;
}

/// Ear clipping for a simple counter-clockwise polygon.
inline std::vector<std::array<std::size_t, 3>> triangulate(const std::vector<Vec2>& poly) {
  std::vector<std::size_t> idx(poly.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<std::array<std::size_t, 3>> out;
  auto inside = [&](const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
    return cross2(a, b, p) >= 0 && cross2(b, c, p) >= 0 && cross2(c, a, p) >= 0;
  };
  std::size_t guard = 0;
  while (idx.size() > 3) {
    if (++guard > 10000) throw std::runtime_error("polygon triangulation failed");
    bool clipped = false;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t ia = idx[(i + idx.size() - 1) % idx.size()], ib = idx[i], ic = idx[(i + 1) % idx.size()];
      const Vec2 &a = poly[ia], &b = poly[ib], &c = poly[ic];
      if (cross2(a, b, c) <= 0) continue;
      bool ear = true;
      for (std::size_t j : idx) {
        if (j == ia || j == ib || j == ic) continue;
        if (inside(poly[j], a, b, c)) {
          ear = false;
          break;
        }
      }
      if (!ear) continue;
      out.push_back({ia, ib, ic});
      idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(i));
      clipped = true;
      break;
    }
    if (!clipped) throw std::runtime_error("polygon triangulation found no ear");
  }
  out.push_back({idx[0], idx[1], idx[2]});
  return out;
}

struct MeshBuilder {
  std::vector<Point3> vertices;
  std::vector<TriangleIndices> triangles;

  std::uint32_t add(const Point3& p) {
    vertices.push_back(p);
    return static_cast<std::uint32_t>(vertices.size() - 1);
  }

  /// Adds a triangle, flipping it if its normal disagrees with `outward`.
  void face(std::uint32_t a, std::uint32_t b, std::uint32_t c, const Point3& outward) {
    const Point3 n = cross(vertices[b] - vertices[a], vertices[c] - vertices[a]);
    if (dot(n, outward) < 0) std::swap(b, c);
    triangles.push_back({a, b, c});
  }

  /// Extrudes a CCW (x, z) profile between y0 and y1.
  void extrude(const std::vector<Vec2>& profile, double y0, double y1) {
    const auto base = static_cast<std::uint32_t>(vertices.size());
    const auto n = static_cast<std::uint32_t>(profile.size());
    for (const auto& p : profile) add({p.x, y1, p.z});
    for (const auto& p : profile) add({p.x, y0, p.z});
    for (const auto& t : triangulate(profile)) {
      const auto a = static_cast<std::uint32_t>(t[0]), b = static_cast<std::uint32_t>(t[1]),
                 c = static_cast<std::uint32_t>(t[2]);
      face(base + a, base + b, base + c, {0, 1, 0});
      face(base + n + a, base + n + b, base + n + c, {0, -1, 0});
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t j = (i + 1) % n;
      const double dx = profile[j].x - profile[i].x, dz = profile[j].z - profile[i].z;
      const Point3 outward{dz, 0.0, -dx};
      face(base + i, base + j, base + n + j, outward);
      face(base + i, base + n + j, base + n + i, outward);
    }
  }

  /// Closed octagonal prism along y, centered at (x, z).
  void wheel(double x, double z, double r, double y0, double y1) {
    std::vector<Vec2> ring;
    for (int k = 0; k < 8; ++k) {
      const double a = (22.5 + 45.0 * k) * kDegToRad;
      ring.push_back({x + r * std::cos(a), z + r * std::sin(a)});
    }
    extrude(ring, y0, y1);
  }
};

struct ProfileStyle {
  double front_share;    // share of the non-cabin length ahead of the cabin
  double windshield;     // windshield run / rise
  double rear_window;    // rear window run / rise
  double belt;           // beltline height as a fraction of (height - clearance)
};

inline ProfileStyle style_of(VehicleClass c) {
  switch (c) {
    case VehicleClass::Sedan: return {0.55, 1.3, 1.1, 0.50};
    case VehicleClass::SUV: return {0.70, 0.9, 0.3, 0.50};
    case VehicleClass::Truck: return {0.30, 0.8, 0.05, 0.55};
    case VehicleClass::Van: return {1.00, 0.9, 0.05, 0.45};
    case VehicleClass::Bus: return {1.00, 0.1, 0.02, 0.35};
  }
  return {0.5, 1.0, 1.0, 0.5};
}

}  // namespace detail

/// Builds a closed vehicle mesh in the Canonical frame: nose along +x,
/// bounding box centered in x/y, lowest point at z = 0. The body is an
/// extruded side profile with wheel-arch notches; each wheel is a separate
/// closed prism.
inline TriMesh gen_vehicle_mesh(const VehicleSpec& spec) {
  using detail::Vec2;
  spec.validate();
  const auto style = detail::style_of(spec.vehicle_class);
  const double L = spec.length, W = spec.width, H = spec.height, r = spec.wheel_radius;
  const double zc = 0.55 * r;
  const double zb = zc + style.belt * (H - zc);
  const double zarch = 2.1 * r;
  const double zfront = zc + 0.75 * (zb - zc);
  const double nose = 0.06 * L;

  const double cabin = spec.cabin_fraction * L;
  const double rest = L - cabin - nose;
  const double x_ws = L / 2 - nose - style.front_share * rest;  // windshield base
  const double x_rw = x_ws - cabin;                             // rear window base
  const double rise = H - zb;
  const double ws_run = std::min(style.windshield * rise, 0.4 * cabin);
  const double rw_run = std::min(style.rear_window * rise, 0.4 * cabin);

  const double ax_front = L / 2 - 0.19 * L;
  const double ax_rear = -L / 2 + 0.21 * L;
  const double arch_lo = 1.35 * r, arch_hi = 1.05 * r;

  std::vector<Vec2> profile;
  profile.push_back({-L / 2, zc});
  for (double ax : {ax_rear, ax_front}) {
    profile.push_back({ax - arch_lo, zc});
    profile.push_back({ax - arch_hi, zarch});
    profile.push_back({ax + arch_hi, zarch});
    profile.push_back({ax + arch_lo, zc});
  }
  profile.push_back({L / 2, zc});
  profile.push_back({L / 2, zfront});
  profile.push_back({L / 2 - nose, zb});
  if (x_ws < L / 2 - nose - 1e-6) profile.push_back({x_ws, zb});
  profile.push_back({x_ws - ws_run, H});
  profile.push_back({x_rw + rw_run, H});
  if (x_rw > -L / 2 + 0.05 * L) {
    profile.push_back({x_rw, zb});
    profile.push_back({-L / 2 + 0.04 * L, zb});
    profile.push_back({-L / 2, zb - 0.15 * (zb - zc)});
  } else {
    profile.push_back({-L / 2, std::max(zb, H - 0.1 * rise)});
  }
  profile = detail::simplify(std::move(profile));
  if (detail::signed_area(profile) < 0) std::reverse(profile.begin(), profile.end());

  detail::MeshBuilder mb;
  mb.extrude(profile, -W / 2, W / 2);
  const double tread = spec.vehicle_class == VehicleClass::Bus ? 0.30 : 0.24;
  for (double ax : {ax_rear, ax_front}) {
    mb.wheel(ax, r, r, W / 2 - 0.02 - tread, W / 2 - 0.02);
    mb.wheel(ax, r, r, -W / 2 + 0.02, -W / 2 + 0.02 + tread);
  }

  const BoundingBox box = bounding_box(mb.vertices);
  const Point3 shift{-box.center().x, -box.center().y, -box.min.z};
  for (auto& v : mb.vertices) v = v + shift;
  return TriMesh(std::move(mb.vertices), std::move(mb.triangles));
}

// ---------------------------------------------------------------- sampling

/// Probe directions spread over the unit sphere (Fibonacci lattice).
inline std::vector<Point3> probe_directions(std::size_t count) {
  std::vector<Point3> dirs;
  dirs.reserve(count);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < count; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(count);
    const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    dirs.push_back({rad * std::cos(phi), rad * std::sin(phi), z});
  }
  return dirs;
}

struct SurfaceSampleOptions {
  std::size_t probe_count = 64;
  double sphere_scale = 3.0;  // probe sphere radius in mesh diagonals
  std::size_t max_attempts_per_point = 1000;
};

/// Area-weighted uniform sampling restricted to the exterior surface: a
/// candidate is kept only if some probe ray from the enclosing sphere reaches
/// it unoccluded.
inline PointCloud uniform_surface_sample(const TriMesh& mesh, std::size_t n, std::uint64_t seed,
                                         const SurfaceSampleOptions& opt = {}) {
  if (n == 0) throw std::invalid_argument("sample count must be >= 1");
  const auto tris = triangle_soup(mesh);
  std::vector<double> cumulative;
  cumulative.reserve(tris.size());
  double total = 0.0;
  for (const auto& t : tris) cumulative.push_back(total += t.area());
  if (!(total > 0.0)) throw std::invalid_argument("mesh has zero total area");

  const BoundingBox box = mesh.bounds();
  const Point3 center = box.center();
  const double sphere = opt.sphere_scale * box.diagonal();
  const double tol = 1e-9 * sphere;
  std::vector<Point3> probes;
  for (const auto& d : probe_directions(opt.probe_count)) probes.push_back(center + d * sphere);

  auto exterior = [&](const Point3& p) {
    for (const auto& o : probes) {
      const Point3 d = p - o;
      const double dist = norm(d);
      const Point3 dir = d * (1.0 / dist);
      auto t = first_hit(o, dir, tris);
      if (!t || *t >= dist - tol) return true;
    }
    return false;
  };

  Rng rng(seed);
  PointCloud out;
  out.frame = Frame::Canonical;
  out.points.reserve(n);
  std::size_t attempts = 0;
  while (out.points.size() < n) {
    if (++attempts > opt.max_attempts_per_point * n)
      throw std::runtime_error("surface sampling could not find enough exterior points");
    const double pick = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const auto& tri = tris[static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cumulative.begin(), static_cast<std::ptrdiff_t>(tris.size()) - 1))];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const Point3 p = tri.a * (1.0 - r1) + tri.b * (r1 * (1.0 - r2)) + tri.c * (r1 * r2);
    if (exterior(p)) out.points.push_back(p);
  }
  return out;
}

}  // namespace lidarshape::sim
