#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarshape/autodiff.hpp"

namespace lidarshape {

/// Named parameter tensors, ordered by name.
template <typename T>
using ParamStore = std::map<std::string, ad::Tensor<T>>;

template <typename T>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;

  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Moments> moments;
};

/// One Adam update with bias correction. Only parameters present in `grads`
/// are touched; the step counter advances once per call.
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("adam: gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape())
      throw ad::ShapeError("adam: shape mismatch for " + name + ": " + ad::shape_string(it->second.shape()) +
                           " vs " + ad::shape_string(g.shape()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, t));
  const T lr = static_cast<T>(state.lr);
  const T eps = static_cast<T>(state.epsilon);
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto& mo = state.moments[name];
    if (mo.m.empty()) {
      mo.m.assign(p.size(), T{0});
      mo.v.assign(p.size(), T{0});
    }
    const auto gd = g.data();
    auto pd = p.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      mo.m[i] = b1 * mo.m[i] + (T{1} - b1) * gd[i];
      mo.v[i] = b2 * mo.v[i] + (T{1} - b2) * gd[i] * gd[i];
      const T mhat = mo.m[i] / c1;
      const T vhat = mo.v[i] / c2;
      pd[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace lidarshape
