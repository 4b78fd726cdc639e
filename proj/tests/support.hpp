#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "lidarshape/autodiff.hpp"
#include "lidarshape/geometry.hpp"
#include "lidarshape/random.hpp"

namespace testing_support {

using lidarshape::ad::Tape;
using lidarshape::ad::Tensor;
using lidarshape::ad::Var;

inline Tensor<double> random_tensor(lidarshape::Rng& rng, lidarshape::ad::Shape shape, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

using LossFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double rel_error(double a, double n, double floor = 1e-3) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Compares tape gradients of `loss(inputs)` against central differences
/// with step h on every entry of every input.
inline GradCheck grad_check(const LossFn& loss, const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  auto out = loss(tape, vars);
  auto grads = tape.backward(out);
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t;
    t.set_recording(false);
    std::vector<Var<double>> vs;
    for (const auto& x : xs) vs.push_back(t.parameter(x));
    return loss(t, vs).value()[0];
  };
  GradCheck r;
  auto xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& g = grads.at(vars[k]);
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + h;
      const double up = eval(xs);
      xs[k][i] = orig - h;
      const double down = eval(xs);
      xs[k][i] = orig;
      r.max_rel = std::max(r.max_rel, rel_error(g[i], (up - down) / (2.0 * h)));
      ++r.checked;
    }
  }
  return r;
}

/// sum(out * w) for a fixed random w, so every output entry gets a distinct
/// upstream gradient.
inline Var<double> weighted_sum(Tape<double>& tape, const Var<double>& out, std::uint64_t seed) {
  lidarshape::Rng rng(seed);
  auto w = tape.constant(random_tensor(rng, out.shape()));
  return lidarshape::ad::sum(lidarshape::ad::mul(out, w));
}

/// Axis-aligned cube of edge `edge` centred at `c`, two triangles per face,
/// outward winding.
inline lidarshape::TriMesh cube_mesh(lidarshape::Point3 c = {}, double edge = 1.0) {
  const double h = 0.5 * edge;
  std::vector<lidarshape::Point3> v;
  for (int i = 0; i < 8; ++i)
    v.push_back({c.x + ((i & 1) ? h : -h), c.y + ((i & 2) ? h : -h), c.z + ((i & 4) ? h : -h)});
  std::vector<lidarshape::TriangleIndices> f{{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return lidarshape::TriMesh(std::move(v), std::move(f));
}

/// Closest-point distance from p to triangle abc by region classification.
inline double point_triangle_distance(const lidarshape::Point3& p, const lidarshape::Point3& a,
                                      const lidarshape::Point3& b, const lidarshape::Point3& c) {
  using lidarshape::dot;
  const auto ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  auto dist = [&](const lidarshape::Point3& q) { return lidarshape::norm(p - q); };
  if (d1 <= 0 && d2 <= 0) return dist(a);
  const auto bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return dist(b);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return dist(a + ab * (d1 / (d1 - d3)));
  const auto cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return dist(c);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return dist(a + ac * (d2 / (d2 - d6)));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return dist(b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6))));
  const double denom = 1.0 / (va + vb + vc);
  return dist(a + ab * (vb * denom) + ac * (vc * denom));
}

inline double point_mesh_distance(const lidarshape::Point3& p, const lidarshape::TriMesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mesh.triangles().size(); ++i) {
    const auto t = mesh.triangle(i);
    best = std::min(best, point_triangle_distance(p, t.a, t.b, t.c));
  }
  return best;
}

}  // namespace testing_support
