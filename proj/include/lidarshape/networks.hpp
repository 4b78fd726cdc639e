#pragma once

// PointNet-style encoder, coarse-to-fine folding shape decoder, pose decoder,
// and the two end-to-end architectures (sequential baseline and shared
// encoder).

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lidarshape/adam.hpp"
#include "lidarshape/autodiff.hpp"
#include "lidarshape/geometry.hpp"
#include "lidarshape/random.hpp"

namespace lidarshape {

enum class Architecture { Baseline, SharedEncoder };

inline const char* architecture_name(Architecture a) {
  return a == Architecture::Baseline ? "baseline" : "shared_encoder";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "baseline") return Architecture::Baseline;
  if (s == "shared_encoder") return Architecture::SharedEncoder;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

struct NetConfig {
  std::size_t n_coarse = 64;
  std::size_t grid_size = 4;         // folding grid is grid_size x grid_size
  double grid_half_extent = 0.05;    // grid spans [-h, h]^2
  std::size_t input_points = 128;    // partials are resampled to this size
  double vehicle_z = -2.0;           // known height of the canonical origin in the sensor frame

  std::size_t n_fine() const { return n_coarse * grid_size * grid_size; }
};

inline constexpr std::size_t kCodeSize = 1024;

namespace names {
inline const std::string kEncoder = "encoder";
inline const std::string kPoseEncoder = "pose_encoder";
inline const std::string kShapeEncoder = "shape_encoder";
inline const std::string kShapeDecoder = "shape_decoder";
inline const std::string kPoseDecoder = "pose_decoder";
inline const std::string kSCd = "uncertainty.s_cd";
inline const std::string kSP = "uncertainty.s_p";
}  // namespace names

template <typename T>
struct Model {
  Architecture arch = Architecture::SharedEncoder;
  NetConfig net;
  ParamStore<T> params;

  template <typename U>
  Model<U> cast() const {
    Model<U> out{arch, net, {}};
    for (const auto& [k, v] : params) out.params.emplace(k, v.template cast<U>());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params) n += v.size();
    return n;
  }
};

using ModelParams = Model<float>;

// ---------------------------------------------------------------- parameters

namespace detail {

inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

struct LayerSpec {
  std::string name;
  std::size_t in;
  std::size_t out;
};

inline std::vector<LayerSpec> encoder_layers(const std::string& p) {
  return {{p + ".mlp1.0", 3, 128}, {p + ".mlp1.1", 128, 256}, {p + ".mlp2.0", 512, 512}, {p + ".mlp2.1", 512, kCodeSize}};
}

inline std::vector<LayerSpec> shape_decoder_layers(const NetConfig& net) {
  const std::string p = names::kShapeDecoder;
  return {{p + ".fc.0", kCodeSize, 1024},
          {p + ".fc.1", 1024, 1024},
          {p + ".fc.2", 1024, 3 * net.n_coarse},
          {p + ".fold.0", kCodeSize + 3 + 2, 512},
          {p + ".fold.1", 512, 512},
          {p + ".fold.2", 512, 3}};
}

inline std::vector<LayerSpec> pose_decoder_layers() {
  const std::string p = names::kPoseDecoder;
  return {{p + ".fc.0", kCodeSize, 512}, {p + ".fc.1", 512, 512}, {p + ".fc.2", 512, 3}};
}

}  // namespace detail

/// Allocates every parameter of the architecture, initialized
/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a per-tensor seed.
inline ModelParams init_model(Architecture arch, const NetConfig& net, std::uint64_t seed) {
  if (net.n_coarse == 0 || net.grid_size == 0) throw std::invalid_argument("decoder sizes must be positive");
  ModelParams m{arch, net, {}};
  std::vector<detail::LayerSpec> layers;
  auto append = [&](std::vector<detail::LayerSpec> v) { layers.insert(layers.end(), v.begin(), v.end()); };
  if (arch == Architecture::SharedEncoder) {
    append(detail::encoder_layers(names::kEncoder));
  } else {
    append(detail::encoder_layers(names::kPoseEncoder));
    append(detail::encoder_layers(names::kShapeEncoder));
  }
  append(detail::shape_decoder_layers(net));
  append(detail::pose_decoder_layers());
  for (const auto& l : layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    for (const auto& [suffix, shape] :
         {std::pair{std::string(".weight"), ad::Shape{l.in, l.out}}, std::pair{std::string(".bias"), ad::Shape{l.out}}}) {
      const std::string name = l.name + suffix;
      Rng rng(derive_seed(seed, {detail::name_hash(name)}));
      ad::Tensor<float> t(shape);
      for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
      m.params.emplace(name, std::move(t));
    }
  }
  m.params.emplace(names::kSCd, ad::Tensor<float>({1}, 0.0f));
  m.params.emplace(names::kSP, ad::Tensor<float>({1}, 0.0f));
  return m;
}

inline std::size_t parameter_count(const ModelParams& m) { return m.parameter_count(); }

// ---------------------------------------------------------------- binding

/// Lazily places named parameters on a tape: as gradient-tracked leaves when
/// `trainable(name)` holds, as constants otherwise.
template <typename T>
class Binding {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  Binding(ad::Tape<T>& tape, const ParamStore<T>& params, Predicate trainable = {})
      : tape_(tape), params_(params), trainable_(std::move(trainable)) {}

  ad::Var<T> operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    auto p = params_.find(name);
    if (p == params_.end()) throw std::out_of_range("missing parameter " + name);
    const bool train = trainable_ && trainable_(name);
    ad::Var<T> v = train ? tape_.parameter(p->second) : tape_.constant(p->second);
    bound_.emplace(name, v);
    if (train) trainable_bound_.emplace(name, v);
    return v;
  }

  ad::Tape<T>& tape() { return tape_; }

  /// Parameters bound as gradient-tracked leaves.
  const std::map<std::string, ad::Var<T>>& trainable() const { return trainable_bound_; }

 private:
  ad::Tape<T>& tape_;
  const ParamStore<T>& params_;
  Predicate trainable_;
  std::map<std::string, ad::Var<T>> bound_;
  std::map<std::string, ad::Var<T>> trainable_bound_;
};

// ---------------------------------------------------------------- blocks

namespace detail {

template <typename T>
ad::Var<T> dense(Binding<T>& b, const std::string& layer, const ad::Var<T>& x) {
  return ad::add_bias(ad::matmul(x, b(layer + ".weight")), b(layer + ".bias"));
}

inline std::atomic<std::size_t>& encoder_counter() {
  static std::atomic<std::size_t> counter{0};
  return counter;
}

}  // namespace detail

/// Number of encoder evaluations since process start.
inline std::size_t encoder_call_count() { return detail::encoder_counter().load(); }

template <typename T>
ad::Tensor<T> points_tensor(const PointCloud& cloud) {
  require_non_empty(cloud);
  ad::Tensor<T> t({cloud.size(), 3});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    t[3 * i] = static_cast<T>(cloud.points[i].x);
    t[3 * i + 1] = static_cast<T>(cloud.points[i].y);
    t[3 * i + 2] = static_cast<T>(cloud.points[i].z);
  }
  return t;
}

template <typename T>
PointCloud to_cloud(const ad::Tensor<T>& t, Frame frame) {
  PointCloud c;
  c.frame = frame;
  c.points.reserve(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i)
    c.points.push_back({static_cast<double>(t[3 * i]), static_cast<double>(t[3 * i + 1]),
                        static_cast<double>(t[3 * i + 2])});
  return c;
}

/// [n x 3] points -> [1024] global code. Shared pointwise MLP (3 -> 128 ->
/// 256), max-pool, concatenation of the pooled feature to every point, a
/// second pointwise MLP (512 -> 512 -> 1024) and a final max-pool.
template <typename T>
ad::Var<T> encode(Binding<T>& b, const std::string& prefix, const ad::Var<T>& points) {
  if (points.value().rank() != 2 || points.value().cols() != 3)
    throw ad::ShapeError("encode expects [n x 3] points, got " + ad::shape_string(points.shape()));
  if (points.value().rows() == 0) throw std::invalid_argument("empty cloud");
  detail::encoder_counter().fetch_add(1);
  auto h = ad::relu(detail::dense(b, prefix + ".mlp1.0", points));
  auto local = detail::dense(b, prefix + ".mlp1.1", h);
  auto global = ad::reshape(ad::reduce_max_rows(local), {1, 256});
  // [local | global] * W == local * W[0:256] + global * W[256:512]
  auto w = b(prefix + ".mlp2.0.weight");
  auto from_local = ad::matmul(local, ad::slice_rows(w, 0, 256));
  auto from_global = ad::reshape(ad::matmul(global, ad::slice_rows(w, 256, 512)), {512});
  auto h2 = ad::relu(ad::add_bias(from_local, ad::add(from_global, b(prefix + ".mlp2.0.bias"))));
  auto features = detail::dense(b, prefix + ".mlp2.1", h2);
  return ad::reduce_max_rows(features);
}

template <typename T>
struct ShapeOutput {
  ad::Var<T> coarse;  // [n_coarse x 3]
  ad::Var<T> fine;    // [n_fine x 3]
};

/// Folding-grid coordinates, row-major over a grid_size x grid_size lattice,
/// tiled once per coarse point.
template <typename T>
ad::Tensor<T> folding_grid(const NetConfig& net) {
  const std::size_t u = net.grid_size, per = u * u;
  ad::Tensor<T> g({net.n_fine(), 2});
  for (std::size_t c = 0; c < net.n_coarse; ++c)
    for (std::size_t i = 0; i < u; ++i)
      for (std::size_t j = 0; j < u; ++j) {
        const auto coord = [&](std::size_t k) {
          return u == 1 ? 0.0 : -net.grid_half_extent + 2.0 * net.grid_half_extent * static_cast<double>(k) /
                                                            static_cast<double>(u - 1);
        };
        const std::size_t row = c * per + i * u + j;
        g[2 * row] = static_cast<T>(coord(i));
        g[2 * row + 1] = static_cast<T>(coord(j));
      }
  return g;
}

template <typename T>
ShapeOutput<T> decode_shape(Binding<T>& b, const NetConfig& net, const ad::Var<T>& code) {
  if (code.value().size() != kCodeSize)
    throw ad::ShapeError("decode_shape expects a [1024] code, got " + ad::shape_string(code.shape()));
  const std::string p = names::kShapeDecoder;
  auto c = ad::reshape(code, {1, kCodeSize});
  auto h = ad::relu(detail::dense(b, p + ".fc.0", c));
  h = ad::relu(detail::dense(b, p + ".fc.1", h));
  auto coarse = ad::reshape(detail::dense(b, p + ".fc.2", h), {net.n_coarse, 3});

  const std::size_t per = net.grid_size * net.grid_size;
  auto centers = ad::repeat_rows(coarse, per);
  auto grid = b.tape().constant(folding_grid<T>(net));
  // [code | center | grid] * W, split so the code product is computed once
  auto w = b(p + ".fold.0.weight");
  auto from_code = ad::reshape(ad::matmul(c, ad::slice_rows(w, 0, kCodeSize)), {512});
  auto from_points = ad::add(ad::matmul(centers, ad::slice_rows(w, kCodeSize, kCodeSize + 3)),
                             ad::matmul(grid, ad::slice_rows(w, kCodeSize + 3, kCodeSize + 5)));
  auto f = ad::relu(ad::add_bias(from_points, ad::add(from_code, b(p + ".fold.0.bias"))));
  f = ad::relu(detail::dense(b, p + ".fold.1", f));
  auto offsets = detail::dense(b, p + ".fold.2", f);
  return {coarse, ad::add(centers, offsets)};
}

/// Raw [3] output (theta, x, y).
template <typename T>
ad::Var<T> decode_pose(Binding<T>& b, const ad::Var<T>& code) {
  if (code.value().size() != kCodeSize)
    throw ad::ShapeError("decode_pose expects a [1024] code, got " + ad::shape_string(code.shape()));
  const std::string p = names::kPoseDecoder;
  auto c = ad::reshape(code, {1, kCodeSize});
  auto h = ad::relu(detail::dense(b, p + ".fc.0", c));
  h = ad::relu(detail::dense(b, p + ".fc.1", h));
  return ad::reshape(detail::dense(b, p + ".fc.2", h), {3});
}

/// Normalizes the raw pose output into a PlanarPose at the known height.
template <typename T>
PlanarPose pose_from_raw(const ad::Tensor<T>& raw, const NetConfig& net) {
  return {static_cast<double>(raw[0]), static_cast<double>(raw[1]), static_cast<double>(raw[2]), net.vehicle_z};
}

// ---------------------------------------------------------------- architectures

struct Prediction {
  PlanarPose pose;
  PointCloud completion;  // Sensor frame
};

/// One encoding feeds both decoders. The completion is in the input's frame.
template <typename T>
Prediction shared_forward(const PointCloud& partial, const Model<T>& m) {
  if (m.arch != Architecture::SharedEncoder) throw std::invalid_argument("shared_forward requires a shared-encoder model");
  ad::Tape<T> tape;
  tape.set_recording(false);
  Binding<T> b(tape, m.params);
  auto code = encode(b, names::kEncoder, tape.constant(points_tensor<T>(partial)));
  auto shape = decode_shape(b, m.net, code);
  auto raw = decode_pose(b, code);
  return {pose_from_raw(raw.value(), m.net), to_cloud(shape.fine.value(), partial.frame)};
}

/// Estimates the pose, canonicalizes the input with it, completes in the
/// canonical frame, then re-poses the completion into the input frame.
/// `pose_override` replaces the pose branch's estimate (the pose branch still
/// runs).
template <typename T>
Prediction baseline_forward(const PointCloud& partial, const Model<T>& m,
                            std::optional<PlanarPose> pose_override = std::nullopt) {
  if (m.arch != Architecture::Baseline) throw std::invalid_argument("baseline_forward requires a baseline model");
  ad::Tape<T> tape;
  tape.set_recording(false);
  Binding<T> b(tape, m.params);
  auto pose_code = encode(b, names::kPoseEncoder, tape.constant(points_tensor<T>(partial)));
  const PlanarPose pose = pose_override ? *pose_override : pose_from_raw(decode_pose(b, pose_code).value(), m.net);
  PointCloud canonical = transform_cloud(partial, inverse_pose(pose));
  canonical.frame = Frame::Canonical;
  auto shape_code = encode(b, names::kShapeEncoder, tape.constant(points_tensor<T>(canonical)));
  auto shape = decode_shape(b, m.net, shape_code);
  PointCloud completion = transform_cloud(to_cloud(shape.fine.value(), Frame::Canonical), pose);
  completion.frame = partial.frame;
  return {pose, std::move(completion)};
}

template <typename T>
Prediction forward(const PointCloud& partial, const Model<T>& m) {
  return m.arch == Architecture::Baseline ? baseline_forward(partial, m) : shared_forward(partial, m);
}

}  // namespace lidarshape
