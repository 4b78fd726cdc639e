#pragma once

// Staged training: shape completion, frozen-encoder pose regression, joint
// fine-tuning with learned uncertainty weights, and the two independently
// trained baseline branches. Also the LSCK checkpoint format.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lidarshape/adam.hpp"
#include "lidarshape/autodiff.hpp"
#include "lidarshape/dataset.hpp"
#include "lidarshape/io.hpp"
#include "lidarshape/losses.hpp"
#include "lidarshape/networks.hpp"
#include "lidarshape/random.hpp"

namespace lidarshape::train {

enum class Stage { Shape, PoseFrozen, Joint, BaselinePose, BaselineShape };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Shape: return "shape";
    case Stage::PoseFrozen: return "pose_frozen";
    case Stage::Joint: return "joint";
    case Stage::BaselinePose: return "baseline_pose";
    case Stage::BaselineShape: return "baseline_shape";
  }
  return "unknown";
}

inline Stage parse_stage(const std::string& s) {
  for (auto st : {Stage::Shape, Stage::PoseFrozen, Stage::Joint, Stage::BaselinePose, Stage::BaselineShape})
    if (s == stage_name(st)) return st;
  throw std::invalid_argument("unknown stage '" + s + "'");
}

inline Architecture stage_architecture(Stage s) {
  return s == Stage::BaselinePose || s == Stage::BaselineShape ? Architecture::Baseline : Architecture::SharedEncoder;
}

/// Parameter-name prefixes optimized by each stage; everything else is frozen.
inline std::vector<std::string> trainable_prefixes(Stage s) {
  switch (s) {
    case Stage::Shape: return {names::kEncoder + ".", names::kShapeDecoder + "."};
    case Stage::PoseFrozen: return {names::kPoseDecoder + "."};
    case Stage::Joint: return {names::kEncoder + ".", names::kShapeDecoder + ".", names::kPoseDecoder + ".", "uncertainty."};
    case Stage::BaselinePose: return {names::kPoseEncoder + ".", names::kPoseDecoder + "."};
    case Stage::BaselineShape: return {names::kShapeEncoder + ".", names::kShapeDecoder + "."};
  }
  return {};
}

inline bool is_trainable(Stage s, const std::string& name) {
  for (const auto& p : trainable_prefixes(s))
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 8;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (batch == 0) throw std::invalid_argument("batch size must be >= 1");
    if (threads == 0) throw std::invalid_argument("threads must be >= 1");
  }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelParams model;
  AdamState<float> adam;
  Stage stage = Stage::Shape;
  std::size_t epoch = 0;
  double best_val = 0.0;
  TrainConfig config;
  std::vector<Stage> history;
};

// ---------------------------------------------------------------- inputs

inline constexpr std::uint64_t kInputSeed = 0x1a9e7;

/// The fixed-size network input of a sample (Sensor frame), a function of the
/// sample ids only.
inline PointCloud network_input(const data::Sample& s, std::size_t n) {
  return data::resample_to(s.partial, n, derive_seed(kInputSeed, {s.model_id, s.view_id}));
}

namespace detail {

struct Prepared {
  ad::Tensor<float> input;          // network input points
  ad::Tensor<float> target;         // chamfer target, in the completion's frame
  PointCloud complete;              // Canonical ground truth, for the pose loss
  PlanarPose gt_pose;
  std::optional<ad::Tensor<float>> frozen_code;
};

inline Prepared prepare(Stage stage, const data::Sample& s, const NetConfig& net) {
  Prepared p;
  PointCloud input = network_input(s, net.input_points);
  if (stage == Stage::BaselineShape) {
    input = data::canonicalize(input, s.gt_pose);
    p.target = points_tensor<float>(s.complete);
  } else {
    p.target = points_tensor<float>(transform_cloud(s.complete, s.gt_pose));
  }
  p.input = points_tensor<float>(input);
  p.complete = s.complete;
  p.gt_pose = s.gt_pose;
  return p;
}

template <typename T>
ad::Var<T> sample_loss(Stage stage, Binding<T>& b, const NetConfig& net, const Prepared& p) {
  auto& tape = b.tape();
  auto input = [&] { return tape.constant(p.input.template cast<T>()); };
  auto target = [&] { return tape.constant(p.target.template cast<T>()); };
  switch (stage) {
    case Stage::Shape: {
      auto code = encode(b, names::kEncoder, input());
      return chamfer(decode_shape(b, net, code).fine, target());
    }
    case Stage::PoseFrozen: {
      auto code = p.frozen_code ? tape.constant(p.frozen_code->template cast<T>()) : encode(b, names::kEncoder, input());
      return pose_loss(p.gt_pose, decode_pose(b, code), p.complete);
    }
    case Stage::Joint: {
      auto code = encode(b, names::kEncoder, input());
      auto cd = chamfer(decode_shape(b, net, code).fine, target());
      auto pl = pose_loss(p.gt_pose, decode_pose(b, code), p.complete);
      return joint_loss(cd, pl, b(names::kSCd), b(names::kSP));
    }
    case Stage::BaselinePose: {
      auto code = encode(b, names::kPoseEncoder, input());
      return pose_loss(p.gt_pose, decode_pose(b, code), p.complete);
    }
    case Stage::BaselineShape: {
      auto code = encode(b, names::kShapeEncoder, input());
      return chamfer(decode_shape(b, net, code).fine, target());
    }
  }
  throw std::logic_error("unhandled stage");
}

inline std::vector<Prepared> prepare_all(Stage stage, const std::vector<data::Sample>& samples, const ModelParams& m) {
  std::vector<Prepared> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(prepare(stage, s, m.net));
  if (stage == Stage::PoseFrozen) {
    // The encoder is frozen for the whole stage, so its codes are fixed.
    for (auto& p : out) {
      ad::Tape<float> tape;
      tape.set_recording(false);
      Binding<float> b(tape, m.params);
      p.frozen_code = encode(b, names::kEncoder, tape.constant(p.input)).value();
    }
  }
  return out;
}

inline double mean_loss(Stage stage, const ModelParams& m, const std::vector<Prepared>& prepared) {
  double acc = 0.0;
  for (const auto& p : prepared) {
    ad::Tape<float> tape;
    tape.set_recording(false);
    Binding<float> b(tape, m.params);
    acc += static_cast<double>(sample_loss(stage, b, m.net, p).value()[0]);
  }
  return acc / static_cast<double>(prepared.size());
}

struct SampleGrad {
  double loss = 0.0;
  ParamStore<float> grads;
};

inline SampleGrad sample_gradient(Stage stage, const ModelParams& m, const Prepared& p) {
  ad::Tape<float> tape;
  Binding<float> b(tape, m.params, [stage](const std::string& n) { return is_trainable(stage, n); });
  auto loss = sample_loss(stage, b, m.net, p);
  auto g = tape.backward(loss);
  SampleGrad out;
  out.loss = static_cast<double>(loss.value()[0]);
  for (const auto& [name, var] : b.trainable()) out.grads.emplace(name, g.take(var));
  return out;
}

}  // namespace detail

/// Mean stage loss over `samples` with recording disabled.
inline double validation_loss(Stage stage, const ModelParams& m, const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("empty split");
  return detail::mean_loss(stage, m, detail::prepare_all(stage, samples, m));
}

struct EpochLog {
  std::size_t epoch;
  Stage stage;
  double train_loss;
  double val_loss;
  double s_cd;
  double s_p;
  double wall_ms;
};

struct StageResult {
  Checkpoint best;
  Checkpoint last;  // state after the final epoch run
  double initial_val = 0.0;
  std::vector<double> step_losses;  // mean batch loss before each update
  std::vector<EpochLog> log;
};

/// Called after every epoch; returning false ends the stage early.
using EpochObserver = std::function<bool(const EpochLog&)>;

/// Visiting order of the training samples in `epoch`.
inline std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0xba7c4, epoch}));
  rng.shuffle(order);
  return order;
}

/// Trains one stage starting from `start` and returns the checkpoint with the
/// lowest validation loss (the untrained start state counts as epoch 0).
/// Parameters outside the stage's trainable set are never modified.
inline StageResult train_stage(Stage stage, const Checkpoint& start, const std::vector<data::Sample>& train_set,
                               const std::vector<data::Sample>& val_set, const TrainConfig& cfg,
                               const EpochObserver& observer = {}) {
  cfg.validate();
  if (start.model.arch != stage_architecture(stage))
    throw std::invalid_argument(std::string("stage ") + stage_name(stage) + " cannot train a " +
                                architecture_name(start.model.arch) + " model");
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("training and validation splits must be non-empty");

  ModelParams model = start.model;
  AdamState<float> adam;
  adam.lr = cfg.lr;
  const auto train_prep = detail::prepare_all(stage, train_set, model);
  const auto val_prep = detail::prepare_all(stage, val_set, model);
  const std::size_t batch = std::min(cfg.batch, train_prep.size());
  const std::size_t batches = train_prep.size() / batch;

  auto history = start.history;
  history.push_back(stage);
  StageResult result;
  auto validate = [&](std::size_t epoch) {
    try {
      return detail::mean_loss(stage, model, val_prep);
    } catch (const ad::NonFiniteError& e) {
      throw TrainingError(std::string(stage_name(stage)) + " stage: validation loss diverged after epoch " +
                          std::to_string(epoch) + ": " + e.what());
    }
  };
  result.initial_val = validate(0);
  result.best = Checkpoint{model, adam, stage, 0, result.initial_val, cfg, history};
  result.last = result.best;

  auto scalar = [&](const std::string& n) { return static_cast<double>(model.params.at(n)[0]); };
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = batch_order(train_prep.size(), cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t* ids = order.data() + bi * batch;
      std::vector<detail::SampleGrad> results(batch);
      auto work = [&](std::size_t worker, std::size_t workers) {
        for (std::size_t k = worker; k < batch; k += workers) results[k] = detail::sample_gradient(stage, model, train_prep[ids[k]]);
      };
      std::string failure;
      try {
        const std::size_t workers = std::min(cfg.threads, batch);
        if (workers <= 1) {
          work(0, 1);
        } else {
          std::vector<std::exception_ptr> errors(workers);
          std::vector<std::thread> pool;
          for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
              try {
                work(w, workers);
              } catch (...) {
                errors[w] = std::current_exception();
              }
            });
          for (auto& t : pool) t.join();
          for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        }
      } catch (const ad::NonFiniteError& e) {
        failure = e.what();
      }
      // Reduce in batch order so results do not depend on the thread count.
      ParamStore<float> grads;
      double loss = 0.0;
      if (failure.empty()) {
        for (auto& r : results) {
          loss += r.loss;
          for (auto& [name, g] : r.grads) {
            auto [it, inserted] = grads.try_emplace(name, std::move(g));
            if (!inserted)
              for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
          }
        }
        loss /= static_cast<double>(batch);
        const float inv = 1.0f / static_cast<float>(batch);
        for (auto& [name, g] : grads)
          for (auto& v : g.data()) {
            v *= inv;
            if (!std::isfinite(v)) failure = "non-finite gradient for " + name;
          }
        if (!std::isfinite(loss)) failure = "non-finite loss";
      }
      if (!failure.empty()) {
        std::ostringstream msg;
        msg << stage_name(stage) << " stage diverged at step " << step << " (epoch " << epoch << ", batch " << bi
            << ", samples";
        for (std::size_t k = 0; k < batch; ++k)
          msg << ' ' << train_set[ids[k]].model_id << '/' << train_set[ids[k]].view_id;
        msg << "): " << failure;
        throw TrainingError(msg.str());
      }
      result.step_losses.push_back(loss);
      epoch_loss += loss;
      adam_step(model.params, grads, adam);
      ++step;
    }
    const double val = validate(epoch);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    EpochLog entry{epoch, stage, epoch_loss / static_cast<double>(batches), val, scalar(names::kSCd), scalar(names::kSP), ms};
    result.log.push_back(entry);
    result.last = Checkpoint{model, adam, stage, epoch, val, cfg, history};
    if (val < result.best.best_val) result.best = result.last;
    if (observer && !observer(entry)) break;
  }
  return result;
}

// ---------------------------------------------------------------- protocols

enum class Protocol { Baseline, SharedEncoder, JointSE };

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Baseline: return "baseline";
    case Protocol::SharedEncoder: return "shared_encoder";
    case Protocol::JointSE: return "joint_se";
  }
  return "unknown";
}

inline Protocol parse_protocol(const std::string& s) {
  for (auto p : {Protocol::Baseline, Protocol::SharedEncoder, Protocol::JointSE})
    if (s == protocol_name(p)) return p;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected baseline, shared_encoder or joint_se)");
}

inline std::vector<Stage> protocol_stages(Protocol p) {
  switch (p) {
    case Protocol::Baseline: return {Stage::BaselinePose, Stage::BaselineShape};
    case Protocol::SharedEncoder: return {Stage::Shape, Stage::PoseFrozen};
    case Protocol::JointSE: return {Stage::Shape, Stage::PoseFrozen, Stage::Joint};
  }
  return {};
}

struct ProtocolRun {
  Checkpoint final;
  std::vector<StageResult> stages;
};

/// Called after every epoch of every stage; returning false ends that stage.
using ProtocolObserver = std::function<bool(const EpochLog&)>;

inline Checkpoint initial_checkpoint(Architecture arch, const NetConfig& net, const TrainConfig& cfg) {
  Checkpoint c;
  c.model = init_model(arch, net, derive_seed(cfg.seed, {0x1417}));
  c.config = cfg;
  return c;
}

/// Runs the stages of `protocol`, each starting from the previous stage's
/// best checkpoint. `resume` continues from an existing checkpoint whose
/// history is a prefix of the protocol.
inline ProtocolRun run_protocol(Protocol protocol, const std::vector<data::Sample>& train_set,
                                const std::vector<data::Sample>& val_set, const TrainConfig& cfg, const NetConfig& net,
                                const ProtocolObserver& observer = {}, const Checkpoint* resume = nullptr) {
  const auto stages = protocol_stages(protocol);
  ProtocolRun run;
  Checkpoint current = resume ? *resume
                              : initial_checkpoint(protocol == Protocol::Baseline ? Architecture::Baseline
                                                                                  : Architecture::SharedEncoder,
                                                   net, cfg);
  for (std::size_t i = 0; i < current.history.size(); ++i)
    if (i >= stages.size() || current.history[i] != stages[i])
      throw std::invalid_argument("checkpoint history is not a prefix of the protocol");
  for (std::size_t i = current.history.size(); i < stages.size(); ++i) {
    run.stages.push_back(train_stage(stages[i], current, train_set, val_set, cfg, observer));
    current = run.stages.back().best;
  }
  run.final = current;
  return run;
}

// ---------------------------------------------------------------- checkpoint file

inline constexpr char kCheckpointMagic[4] = {'L', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_string(std::ostream& out, const std::string& s) {
  data::detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const std::uint32_t n = data::detail::get_u32(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw io::FormatError("truncated checkpoint string");
  return s;
}

inline void put_floats(std::ostream& out, std::span<const float> v) {
  for (float f : v) data::detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline std::vector<float> get_floats(std::istream& in, std::size_t n) {
  std::vector<float> v(n);
  for (auto& f : v) f = data::detail::get_f32(in);
  return v;
}

inline std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline io::KeyValues checkpoint_metadata(const Checkpoint& c) {
  io::KeyValues kv;
  kv["arch"] = architecture_name(c.model.arch);
  kv["stage"] = stage_name(c.stage);
  kv["epoch"] = std::to_string(c.epoch);
  kv["best_val"] = detail::format_exact(c.best_val);
  std::string hist;
  for (std::size_t i = 0; i < c.history.size(); ++i) hist += (i ? "," : "") + std::string(stage_name(c.history[i]));
  kv["history"] = hist;
  kv["train.lr"] = detail::format_exact(c.config.lr);
  kv["train.batch"] = std::to_string(c.config.batch);
  kv["train.epochs"] = std::to_string(c.config.epochs);
  kv["train.seed"] = std::to_string(c.config.seed);
  kv["net.n_coarse"] = std::to_string(c.model.net.n_coarse);
  kv["net.grid_size"] = std::to_string(c.model.net.grid_size);
  kv["net.grid_half_extent"] = detail::format_exact(c.model.net.grid_half_extent);
  kv["net.input_points"] = std::to_string(c.model.net.input_points);
  kv["net.vehicle_z"] = detail::format_exact(c.model.net.vehicle_z);
  kv["adam.lr"] = detail::format_exact(c.adam.lr);
  kv["adam.beta1"] = detail::format_exact(c.adam.beta1);
  kv["adam.beta2"] = detail::format_exact(c.adam.beta2);
  kv["adam.epsilon"] = detail::format_exact(c.adam.epsilon);
  kv["adam.step"] = std::to_string(c.adam.step);
  return kv;
}

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  std::ostringstream text;
  io::write_key_values(text, checkpoint_metadata(c));
  out.write(kCheckpointMagic, 4);
  data::detail::put_u32(out, kCheckpointVersion);
  detail::put_string(out, text.str());
  data::detail::put_u32(out, static_cast<std::uint32_t>(c.model.params.size()));
  for (const auto& [name, t] : c.model.params) {
    detail::put_string(out, name);
    data::detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) data::detail::put_u32(out, static_cast<std::uint32_t>(d));
    detail::put_floats(out, t.data());
  }
  data::detail::put_u32(out, static_cast<std::uint32_t>(c.adam.moments.size()));
  for (const auto& [name, mo] : c.adam.moments) {
    detail::put_string(out, name);
    data::detail::put_u32(out, static_cast<std::uint32_t>(mo.m.size()));
    detail::put_floats(out, mo.m);
    detail::put_floats(out, mo.v);
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw io::FormatError("not an LSCK checkpoint");
  const std::uint32_t version = data::detail::get_u32(in);
  if (version != kCheckpointVersion) throw io::FormatError("unsupported LSCK version " + std::to_string(version));
  std::istringstream text(detail::get_string(in));
  const auto kv = io::read_key_values(text);
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw io::FormatError(std::string("checkpoint metadata lacks ") + k);
    return it->second;
  };
  Checkpoint c;
  c.model.arch = parse_architecture(get("arch"));
  c.stage = parse_stage(get("stage"));
  c.epoch = std::stoull(get("epoch"));
  c.best_val = std::stod(get("best_val"));
  {
    std::stringstream hs(get("history"));
    std::string tok;
    while (std::getline(hs, tok, ','))
      if (!tok.empty()) c.history.push_back(parse_stage(tok));
  }
  c.config.lr = std::stod(get("train.lr"));
  c.config.batch = std::stoull(get("train.batch"));
  c.config.epochs = std::stoull(get("train.epochs"));
  c.config.seed = std::stoull(get("train.seed"));
  c.model.net.n_coarse = std::stoull(get("net.n_coarse"));
  c.model.net.grid_size = std::stoull(get("net.grid_size"));
  c.model.net.grid_half_extent = std::stod(get("net.grid_half_extent"));
  c.model.net.input_points = std::stoull(get("net.input_points"));
  c.model.net.vehicle_z = std::stod(get("net.vehicle_z"));
  c.adam.lr = std::stod(get("adam.lr"));
  c.adam.beta1 = std::stod(get("adam.beta1"));
  c.adam.beta2 = std::stod(get("adam.beta2"));
  c.adam.epsilon = std::stod(get("adam.epsilon"));
  c.adam.step = std::stoull(get("adam.step"));
  const std::uint32_t count = data::detail::get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::get_string(in);
    const std::uint32_t rank = data::detail::get_u32(in);
    ad::Shape shape(rank);
    for (auto& d : shape) d = data::detail::get_u32(in);
    auto values = detail::get_floats(in, ad::shape_size(shape));
    c.model.params.emplace(std::move(name), ad::Tensor<float>(std::move(shape), std::move(values)));
  }
  const std::uint32_t moments = data::detail::get_u32(in);
  for (std::uint32_t i = 0; i < moments; ++i) {
    std::string name = detail::get_string(in);
    const std::uint32_t n = data::detail::get_u32(in);
    AdamState<float>::Moments mo;
    mo.m = detail::get_floats(in, n);
    mo.v = detail::get_floats(in, n);
    c.adam.moments.emplace(std::move(name), std::move(mo));
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  io::write_atomically(path, [&](std::ostream& out) { write_checkpoint(out, c); }, true);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

inline void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,stage,train_loss,val_loss,s_cd,s_p,wall_ms\n";
  for (const auto& e : log)
    out << e.epoch << ',' << stage_name(e.stage) << ',' << io::format_real(e.train_loss) << ','
        << io::format_real(e.val_loss) << ',' << io::format_real(e.s_cd) << ',' << io::format_real(e.s_p) << ','
        << static_cast<long long>(std::llround(e.wall_ms)) << '\n';
}

}  // namespace lidarshape::train
