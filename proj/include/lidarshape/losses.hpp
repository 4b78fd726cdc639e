#pragma once

// Chamfer distance, point-transport pose loss and the uncertainty-weighted
// joint loss, each as a plain value function and as a differentiable tape op.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "lidarshape/autodiff.hpp"
#include "lidarshape/geometry.hpp"

namespace lidarshape {

// ---------------------------------------------------------------- nearest neighbors

namespace nn {

template <typename T>
inline T squared_distance(const T* a, const T* b) {
  const T dx = a[0] - b[0];
  const T dy = a[1] - b[1];
  const T dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// For each query row, the index of the nearest reference row. Ties go to
/// the lowest reference index. Points are flat xyz triples.
template <typename T>
std::vector<std::size_t> brute_force(std::span<const T> queries, std::span<const T> refs) {
  const std::size_t nq = queries.size() / 3, nr = refs.size() / 3;
  std::vector<std::size_t> out(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    T best = std::numeric_limits<T>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < nr; ++j) {
      const T d = squared_distance(&queries[3 * i], &refs[3 * j]);
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    out[i] = arg;
  }
  return out;
}

/// Uniform-grid nearest neighbor search returning exactly what brute_force
/// returns: cells are visited in growing shells until no unvisited cell can
/// hold a closer point.
template <typename T>
class Grid {
 public:
  explicit Grid(std::span<const T> refs) : refs_(refs) {
    const std::size_t n = refs.size() / 3;
    if (n == 0) throw std::invalid_argument("empty cloud");
    for (int a = 0; a < 3; ++a) {
      lo_[a] = hi_[a] = static_cast<double>(refs[a]);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], static_cast<double>(refs[3 * i + a]));
        hi_[a] = std::max(hi_[a], static_cast<double>(refs[3 * i + a]));
      }
    double extent = 0.0;
    for (int a = 0; a < 3; ++a) extent = std::max(extent, hi_[a] - lo_[a]);
    const double per_axis = std::max(1.0, std::cbrt(static_cast<double>(n) / 2.0));
    cell_ = extent > 0.0 ? extent / per_axis : 1.0;
    for (int a = 0; a < 3; ++a)
      dims_[a] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor((hi_[a] - lo_[a]) / cell_)) + 1);
    cells_.resize(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]));
    for (std::size_t i = 0; i < n; ++i) cells_[cell_index(coord_of(&refs[3 * i]))].push_back(i);
  }

  std::size_t nearest(const T* q) const {
    const auto c = coord_of(q);
    T best = std::numeric_limits<T>::infinity();
    std::size_t arg = 0;
    const std::int64_t max_shell = std::max({dims_[0], dims_[1], dims_[2]}) + 1;
    for (std::int64_t shell = 0; shell <= max_shell; ++shell) {
      for (std::int64_t dx = -shell; dx <= shell; ++dx)
        for (std::int64_t dy = -shell; dy <= shell; ++dy)
          for (std::int64_t dz = -shell; dz <= shell; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != shell) continue;
            const std::array<std::int64_t, 3> cc{c[0] + dx, c[1] + dy, c[2] + dz};
            if (!in_range(cc)) continue;
            for (std::size_t j : cells_[cell_index(cc)]) {
              const T d = squared_distance(q, &refs_[3 * j]);
              if (d < best || (d == best && j < arg)) {
                best = d;
                arg = j;
              }
            }
          }
      // Any point outside the visited shells is at least this far away.
      const double reach = gap_to_unvisited(q, c, shell);
      if (std::isfinite(static_cast<double>(best)) && reach * reach > static_cast<double>(best) * (1.0 + 1e-12))
        break;
    }
    return arg;
  }

 private:
  std::array<std::int64_t, 3> coord_of(const T* p) const {
    std::array<std::int64_t, 3> c{};
    for (int a = 0; a < 3; ++a) {
      const auto v = static_cast<std::int64_t>(std::floor((static_cast<double>(p[a]) - lo_[a]) / cell_));
      c[a] = std::clamp<std::int64_t>(v, 0, dims_[a] - 1);
    }
    return c;
  }

  bool in_range(const std::array<std::int64_t, 3>& c) const {
    for (int a = 0; a < 3; ++a)
      if (c[a] < 0 || c[a] >= dims_[a]) return false;
    return true;
  }

  std::size_t cell_index(const std::array<std::int64_t, 3>& c) const {
    return static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
  }

  // Distance from q to the boundary of the visited block of cells.
  // Clamped query coordinates make the bound conservative (zero) outside the grid.
  double gap_to_unvisited(const T* q, const std::array<std::int64_t, 3>& c, std::int64_t shell) const {
    double gap = std::numeric_limits<double>::infinity();
    bool covers_all = true;
    for (int a = 0; a < 3; ++a) {
      const double v = static_cast<double>(q[a]);
      const std::int64_t lo_cell = c[a] - shell, hi_cell = c[a] + shell;
      if (lo_cell > 0) {
        covers_all = false;
        gap = std::min(gap, v - (lo_[a] + static_cast<double>(lo_cell) * cell_));
      }
      if (hi_cell < dims_[a] - 1) {
        covers_all = false;
        gap = std::min(gap, (lo_[a] + static_cast<double>(hi_cell + 1) * cell_) - v);
      }
    }
    if (covers_all) return std::numeric_limits<double>::infinity();
    return std::max(0.0, gap);
  }

  std::span<const T> refs_;
  std::array<double, 3> lo_{}, hi_{};
  double cell_ = 1.0;
  std::array<std::int64_t, 3> dims_{};
  std::vector<std::vector<std::size_t>> cells_;
};

enum class Method { BruteForce, Grid, Auto };

// Below this many query-reference pairs the plain scan is faster.
inline constexpr std::size_t kGridMinPairs = std::size_t{1} << 24;

template <typename T>
std::vector<std::size_t> nearest(std::span<const T> queries, std::span<const T> refs, Method method) {
  if (method == Method::Auto)
    method = (queries.size() / 3) * (refs.size() / 3) > kGridMinPairs ? Method::Grid : Method::BruteForce;
  if (method == Method::BruteForce) return brute_force(queries, refs);
  Grid<T> grid(refs);
  std::vector<std::size_t> out(queries.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = grid.nearest(&queries[3 * i]);
  return out;
}

}  // namespace nn

inline std::vector<double> flatten(const PointCloud& c) {
  std::vector<double> v;
  v.reserve(c.size() * 3);
  for (const auto& p : c.points) {
    v.push_back(p.x);
    v.push_back(p.y);
    v.push_back(p.z);
  }
  return v;
}

inline PointCloud unflatten(std::span<const double> v, Frame frame) {
  PointCloud c;
  c.frame = frame;
  c.points.reserve(v.size() / 3);
  for (std::size_t i = 0; i + 2 < v.size(); i += 3) c.points.push_back({v[i], v[i + 1], v[i + 2]});
  return c;
}

// ---------------------------------------------------------------- chamfer

namespace detail {

template <typename T>
T mean_nn_distance(std::span<const T> from, std::span<const T> to, const std::vector<std::size_t>& nn) {
  T acc{0};
  for (std::size_t i = 0; i < nn.size(); ++i) acc += std::sqrt(nn::squared_distance(&from[3 * i], &to[3 * nn[i]]));
  return acc / static_cast<T>(nn.size());
}

}  // namespace detail

/// Symmetric chamfer distance with unsquared Euclidean distances:
/// mean_{x in a} min_y |x - y| + mean_{y in b} min_x |y - x|.
inline double chamfer(const PointCloud& a, const PointCloud& b, nn::Method method = nn::Method::Auto) {
  require_non_empty(a);
  require_non_empty(b);
  const auto fa = flatten(a), fb = flatten(b);
  const std::span<const double> sa(fa), sb(fb);
  const auto ab = nn::nearest(sa, sb, method);
  const auto ba = nn::nearest(sb, sa, method);
  return detail::mean_nn_distance(sa, sb, ab) + detail::mean_nn_distance(sb, sa, ba);
}

/// Differentiable chamfer between two [n x 3] point matrices. The gradient
/// at coincident points is zero.
template <typename T>
ad::Var<T> chamfer(const ad::Var<T>& est, const ad::Var<T>& gt, nn::Method method = nn::Method::Auto) {
  for (const auto* v : {&est, &gt})
    if (v->value().rank() != 2 || v->value().cols() != 3)
      throw ad::ShapeError("chamfer expects [n x 3] point matrices, got " + ad::shape_string(v->shape()));
  if (est.value().rows() == 0 || gt.value().rows() == 0) throw std::invalid_argument("empty cloud");
  const auto se = est.value().data(), sg = gt.value().data();
  auto e2g = nn::nearest<T>(se, sg, method);
  auto g2e = nn::nearest<T>(sg, se, method);
  const T value = detail::mean_nn_distance<T>(se, sg, e2g) + detail::mean_nn_distance<T>(sg, se, g2e);
  const ad::NodeId ie = est.id(), ig = gt.id();
  return est.tape().record(
      "chamfer", ad::Tensor<T>::scalar(value), {est, gt},
      [ie, ig, e2g = std::move(e2g), g2e = std::move(g2e)](ad::Tape<T>& t, ad::NodeId self) {
        const T g = t.grad(self)[0];
        const auto pe = t.value(ie).data(), pg = t.value(ig).data();
        auto ge = t.grad(ie);
        auto gg = t.grad(ig);
        // term(from -> to): d/dfrom_i = w (from_i - to_k) / |.|, d/dto_k = -same
        auto term = [&](std::span<const T> from, std::span<const T> to, const std::vector<std::size_t>& nn,
                        std::span<T> gfrom, std::span<T> gto) {
          const T w = g / static_cast<T>(nn.size());
          for (std::size_t i = 0; i < nn.size(); ++i) {
            const T* a = &from[3 * i];
            const T* b = &to[3 * nn[i]];
            const T d = std::sqrt(nn::squared_distance(a, b));
            if (d == T{0}) continue;
            for (int c = 0; c < 3; ++c) {
              const T v = w * (a[c] - b[c]) / d;
              if (!gfrom.empty()) gfrom[3 * i + c] += v;
              if (!gto.empty()) gto[3 * nn[i] + c] -= v;
            }
          }
        };
        term(pe, pg, e2g, ge, gg);
        term(pg, pe, g2e, gg, ge);
      });
}

// ---------------------------------------------------------------- pose loss

/// Mean squared displacement between the two rigid maps acting on `points`:
/// (1/|X|) sum ||(R x + t) - (R~ x + t~)||^2.
inline double pose_loss(const PlanarPose& gt, const PlanarPose& est, const PointCloud& points) {
  if (points.empty()) throw std::invalid_argument("empty cloud");
  double acc = 0.0;
  for (const auto& x : points.points) {
    const Point3 d = gt.apply(x) - est.apply(x);
    acc += dot(d, d);
  }
  return acc / static_cast<double>(points.size());
}

/// Differentiable pose loss. `est` is the raw [3] network output
/// (theta, x, y); the estimated height equals the ground truth height, so
/// the z terms cancel.
template <typename T>
ad::Var<T> pose_loss(const PlanarPose& gt, const ad::Var<T>& est, const PointCloud& points) {
  if (est.value().size() != 3)
    throw ad::ShapeError("pose_loss expects a [3] pose vector, got " + ad::shape_string(est.shape()));
  if (points.empty()) throw std::invalid_argument("empty cloud");
  const T theta = est.value()[0], etx = est.value()[1], ety = est.value()[2];
  const T c = std::cos(theta), s = std::sin(theta);
  const T gc = static_cast<T>(std::cos(gt.yaw())), gs = static_cast<T>(std::sin(gt.yaw()));
  const T gtx = static_cast<T>(gt.tx()), gty = static_cast<T>(gt.ty());
  const std::size_t n = points.size();
  // residuals and d(R~ x)/dtheta per point, kept for backward
  std::vector<T> cache(4 * n);
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T x = static_cast<T>(points.points[i].x), y = static_cast<T>(points.points[i].y);
    const T dx = (gc * x - gs * y + gtx) - (c * x - s * y + etx);
    const T dy = (gs * x + gc * y + gty) - (s * x + c * y + ety);
    acc += dx * dx + dy * dy;
    cache[4 * i] = dx;
    cache[4 * i + 1] = dy;
    cache[4 * i + 2] = -s * x - c * y;
    cache[4 * i + 3] = c * x - s * y;
  }
  const T value = acc / static_cast<T>(n);
  const ad::NodeId ie = est.id();
  return est.tape().record("pose_loss", ad::Tensor<T>::scalar(value), {est},
                           [ie, n, cache = std::move(cache)](ad::Tape<T>& t, ad::NodeId self) {
                             const T w = T{-2} * t.grad(self)[0] / static_cast<T>(n);
                             T gth{0}, gx{0}, gy{0};
                             for (std::size_t i = 0; i < n; ++i) {
                               const T dx = cache[4 * i], dy = cache[4 * i + 1];
                               gth += dx * cache[4 * i + 2] + dy * cache[4 * i + 3];
                               gx += dx;
                               gy += dy;
                             }
                             auto g = t.grad(ie);
                             g[0] += w * gth;
                             g[1] += w * gx;
                             g[2] += w * gy;
                           });
}

// ---------------------------------------------------------------- joint loss

/// Learned log-variances s = log(sigma^2) of the two tasks.
struct UncertaintyParams {
  double s_cd = 0.0;
  double s_p = 0.0;
};

/// exp(-s_cd)/2 * cd + exp(-s_p)/2 * pl + (s_cd + s_p)/2, which equals
/// cd/(2 sigma_cd^2) + pl/(2 sigma_p^2) + log(sigma_cd sigma_p).
inline double joint_loss(double cd, double pl, const UncertaintyParams& u) {
  return 0.5 * std::exp(-u.s_cd) * cd + 0.5 * std::exp(-u.s_p) * pl + 0.5 * (u.s_cd + u.s_p);
}

/// Differentiable joint loss over [1]-shaped scalars, composed from tape
/// primitives.
template <typename T>
ad::Var<T> joint_loss(const ad::Var<T>& cd, const ad::Var<T>& pl, const ad::Var<T>& s_cd, const ad::Var<T>& s_p) {
  const T half{0.5};
  auto weighted = [&](const ad::Var<T>& loss, const ad::Var<T>& s) {
    return ad::scale(ad::mul(ad::exp(ad::scale(s, T{-1})), loss), half);
  };
  return ad::add(ad::add(weighted(cd, s_cd), weighted(pl, s_p)), ad::scale(ad::add(s_cd, s_p), half));
}

}  // namespace lidarshape
