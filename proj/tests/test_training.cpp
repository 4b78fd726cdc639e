#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "lidarshape/training.hpp"

using namespace lidarshape;
using namespace lidarshape::train;

namespace {

// Small decoder and input so a gradient step takes milliseconds.
NetConfig small_net() {
  NetConfig n;
  n.n_coarse = 16;
  n.grid_size = 2;
  n.input_points = 48;
  return n;
}

const std::vector<data::Sample>& tiny_samples() {
  static const auto samples = [] {
    data::GenerationConfig g;
    g.models = 2;
    g.views_per_model = 3;
    g.n_complete = 128;
    return data::generate(g).samples;
  }();
  return samples;
}

TrainConfig quick(std::size_t epochs, double lr = 1e-3) {
  TrainConfig c;
  c.epochs = epochs;
  c.lr = lr;
  c.batch = 2;
  c.seed = 5;
  return c;
}

Checkpoint start_for(Stage s, const TrainConfig& cfg) { return initial_checkpoint(stage_architecture(s), small_net(), cfg); }

std::string bytes(const Checkpoint& c) {
  std::ostringstream out;
  write_checkpoint(out, c);
  return out.str();
}

constexpr Stage kAllStages[] = {Stage::Shape, Stage::PoseFrozen, Stage::Joint, Stage::BaselinePose, Stage::BaselineShape};

}  // namespace

TEST(Stages, NamesAndTrainableSets) {
  for (auto s : kAllStages) EXPECT_EQ(parse_stage(stage_name(s)), s);
  EXPECT_THROW(parse_stage("nope"), std::invalid_argument);
  EXPECT_TRUE(is_trainable(Stage::Shape, "encoder.mlp1.0.weight"));
  EXPECT_FALSE(is_trainable(Stage::Shape, "pose_decoder.fc.0.weight"));
  EXPECT_FALSE(is_trainable(Stage::PoseFrozen, "encoder.mlp1.0.weight"));
  EXPECT_TRUE(is_trainable(Stage::PoseFrozen, "pose_decoder.fc.0.weight"));
  for (auto s : kAllStages) EXPECT_EQ(is_trainable(s, names::kSCd), s == Stage::Joint) << stage_name(s);
  EXPECT_FALSE(is_trainable(Stage::BaselinePose, "shape_encoder.mlp1.0.weight"));
  EXPECT_FALSE(is_trainable(Stage::BaselineShape, "pose_encoder.mlp1.0.weight"));
}

TEST(BatchOrder, DeterministicPermutationPerEpoch) {
  const auto a = batch_order(20, 3, 1);
  EXPECT_EQ(a, batch_order(20, 3, 1));
  EXPECT_NE(a, batch_order(20, 3, 2));
  EXPECT_NE(a, batch_order(20, 4, 1));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(20);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(sorted, iota);
}

TEST(NetworkInput, FixedPerSampleIds) {
  const auto& s = tiny_samples().front();
  EXPECT_EQ(network_input(s, 48).points, network_input(s, 48).points);
  EXPECT_EQ(network_input(s, 48).size(), 48u);
}

TEST(TrainStage, FrozenParametersBitwiseUnchanged) {
  const auto& d = tiny_samples();
  for (auto stage : kAllStages) {
    const auto cfg = quick(2);
    const auto start = start_for(stage, cfg);
    const auto r = train_stage(stage, start, d, d, cfg);
    ASSERT_EQ(r.last.epoch, cfg.epochs);
    bool moved = false;
    for (const auto& [name, before] : start.model.params) {
      const auto& after = r.last.model.params.at(name);
      if (is_trainable(stage, name))
        moved |= before != after;
      else
        EXPECT_EQ(before, after) << stage_name(stage) << " " << name;
    }
    EXPECT_TRUE(moved) << stage_name(stage);
  }
}

TEST(TrainStage, SecondStepLossBelowFirstOnOneSample) {
  const std::vector<data::Sample> one{tiny_samples().front()};
  for (auto stage : kAllStages) {
    auto cfg = quick(2, 1e-4);
    const auto r = train_stage(stage, start_for(stage, cfg), one, one, cfg);
    ASSERT_EQ(r.step_losses.size(), 2u);
    EXPECT_LT(r.step_losses[1], r.step_losses[0]) << stage_name(stage);
  }
}

TEST(TrainStage, SameSeedIdenticalCheckpointBytesForAnyThreadCount) {
  const auto& d = tiny_samples();
  auto cfg = quick(2);
  const auto a = train_stage(Stage::Joint, start_for(Stage::Joint, cfg), d, d, cfg);
  const auto b = train_stage(Stage::Joint, start_for(Stage::Joint, cfg), d, d, cfg);
  cfg.threads = 3;
  const auto c = train_stage(Stage::Joint, start_for(Stage::Joint, cfg), d, d, cfg);
  EXPECT_EQ(bytes(a.best), bytes(b.best));
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.step_losses, c.step_losses);
  auto cb = c.best;
  cb.config.threads = 1;
  EXPECT_EQ(bytes(a.best), bytes(cb));
}

TEST(TrainStage, BestCheckpointHasLowestValidationLoss) {
  const auto& d = tiny_samples();
  const auto cfg = quick(3);
  const auto r = train_stage(Stage::Shape, start_for(Stage::Shape, cfg), d, d, cfg);
  ASSERT_EQ(r.log.size(), 3u);
  double lowest = r.initial_val;
  for (const auto& e : r.log) lowest = std::min(lowest, e.val_loss);
  EXPECT_EQ(r.best.best_val, lowest);
  // one step per batch of two, last partial batch dropped
  EXPECT_EQ(r.step_losses.size(), 3u * (d.size() / 2));
}

TEST(TrainStage, ValidationLossReproducibleFromSavedCheckpoint) {
  const auto& d = tiny_samples();
  const auto cfg = quick(2);
  for (auto stage : {Stage::Joint, Stage::BaselineShape}) {
    const auto r = train_stage(stage, start_for(stage, cfg), d, d, cfg);
    std::stringstream buf;
    write_checkpoint(buf, r.best);
    const auto back = read_checkpoint(buf);
    EXPECT_NEAR(validation_loss(stage, back.model, d), r.best.best_val, 1e-6) << stage_name(stage);
  }
}

TEST(TrainStage, ObserverCanStopEarly) {
  const auto& d = tiny_samples();
  const auto cfg = quick(10);
  std::size_t seen = 0;
  const auto r = train_stage(Stage::BaselinePose, start_for(Stage::BaselinePose, cfg), d, d, cfg, [&](const EpochLog& e) {
    ++seen;
    return e.epoch < 2;
  });
  EXPECT_EQ(seen, 2u);
  EXPECT_EQ(r.log.size(), 2u);
}

TEST(TrainStage, NonFiniteLossAbortsWithDiagnostic) {
  const auto& d = tiny_samples();
  const auto cfg = quick(1);
  // a coordinate beyond float range poisons every training step
  auto poisoned = d;
  for (auto& s : poisoned) s.partial.points.assign(s.partial.size(), {1e39, 0.0, -1.0});
  try {
    train_stage(Stage::Joint, start_for(Stage::Joint, cfg), poisoned, d, cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("samples"), std::string::npos) << msg;
  }
  // a diverged model is also caught at validation
  auto start = start_for(Stage::Joint, cfg);
  start.model.params.at(names::kSCd)[0] = -1e6f;  // exp(-s) overflows
  EXPECT_THROW(train_stage(Stage::Joint, start, d, d, cfg), TrainingError);
}

TEST(TrainStage, RejectsInvalidInputs) {
  const auto& d = tiny_samples();
  auto cfg = quick(1);
  EXPECT_THROW(train_stage(Stage::Shape, start_for(Stage::BaselinePose, cfg), d, d, cfg), std::invalid_argument);
  EXPECT_THROW(train_stage(Stage::Shape, start_for(Stage::Shape, cfg), d, {}, cfg), std::invalid_argument);
  EXPECT_THROW(train_stage(Stage::Shape, start_for(Stage::Shape, cfg), {}, d, cfg), std::invalid_argument);
  cfg.lr = 0.0;
  EXPECT_THROW(train_stage(Stage::Shape, start_for(Stage::Shape, cfg), d, d, cfg), std::invalid_argument);
}

TEST(Protocol, HistoriesAndFrozenEncoder) {
  const auto& d = tiny_samples();
  const auto cfg = quick(2);
  const auto net = small_net();
  const auto jse = run_protocol(Protocol::JointSE, d, d, cfg, net);
  EXPECT_EQ(jse.final.history, (std::vector<Stage>{Stage::Shape, Stage::PoseFrozen, Stage::Joint}));
  EXPECT_EQ(jse.final.stage, Stage::Joint);

  const auto se = run_protocol(Protocol::SharedEncoder, d, d, cfg, net);
  ASSERT_EQ(se.stages.size(), 2u);
  EXPECT_EQ(se.final.history, (std::vector<Stage>{Stage::Shape, Stage::PoseFrozen}));
  const auto& shape_best = se.stages[0].best.model.params;
  for (const auto& [name, t] : se.final.model.params)
    if (name.starts_with(names::kEncoder + ".")) {
      EXPECT_EQ(t, shape_best.at(name)) << name;
    }
  // the JointSE run passes through the same two stages
  EXPECT_EQ(bytes(jse.stages[1].best), bytes(se.final));

  const auto bl = run_protocol(Protocol::Baseline, d, d, cfg, net);
  EXPECT_EQ(bl.final.history, (std::vector<Stage>{Stage::BaselinePose, Stage::BaselineShape}));
  EXPECT_EQ(bl.final.model.arch, Architecture::Baseline);
}

TEST(Protocol, ResumeRunsOnlyRemainingStages) {
  const auto& d = tiny_samples();
  const auto cfg = quick(1);
  const auto net = small_net();
  const auto se = run_protocol(Protocol::SharedEncoder, d, d, cfg, net);
  const auto full = run_protocol(Protocol::JointSE, d, d, cfg, net);
  const auto resumed = run_protocol(Protocol::JointSE, d, d, cfg, net, {}, &se.final);
  ASSERT_EQ(resumed.stages.size(), 1u);
  EXPECT_EQ(bytes(resumed.final), bytes(full.final));
  EXPECT_THROW(run_protocol(Protocol::Baseline, d, d, cfg, net, {}, &se.final), std::invalid_argument);
}

TEST(Protocol, AllThreeCompleteOnEightModelDeskData) {
  data::GenerationConfig g;
  g.views_per_model = 2;
  g.n_complete = 128;
  const auto ds = data::generate(g);
  EXPECT_EQ(ds.model_ids().size(), 8u);
  const auto [tr, va] = data::split(ds, 2, g.seed);
  for (auto p : {Protocol::Baseline, Protocol::SharedEncoder, Protocol::JointSE}) {
    const auto run = run_protocol(p, tr.samples, va.samples, quick(1), small_net());
    for (const auto& s : run.stages)
      for (const auto& e : s.log) EXPECT_TRUE(std::isfinite(e.train_loss) && std::isfinite(e.val_loss));
  }
}

TEST(Checkpoint, RoundTripReproducesForwardBitwise) {
  const auto& d = tiny_samples();
  const auto cfg = quick(1);
  const auto r = train_stage(Stage::Joint, start_for(Stage::Joint, cfg), d, d, cfg);
  const std::string b = bytes(r.best);
  std::istringstream in(b);
  const auto back = read_checkpoint(in);
  EXPECT_EQ(back.model.params, r.best.model.params);
  EXPECT_EQ(back.history, r.best.history);
  EXPECT_EQ(back.best_val, r.best.best_val);
  EXPECT_EQ(back.adam.step, r.best.adam.step);
  EXPECT_EQ(bytes(back), b);
  const auto input = network_input(d[0], back.model.net.input_points);
  const auto p1 = forward(input, r.best.model), p2 = forward(input, back.model);
  EXPECT_EQ(p1.completion.points, p2.completion.points);
  EXPECT_EQ(p1.pose.yaw(), p2.pose.yaw());
}

TEST(Checkpoint, FileRoundTripAndErrors) {
  const auto cfg = quick(1);
  const auto c = start_for(Stage::BaselinePose, cfg);
  const auto path = std::filesystem::temp_directory_path() / "lidarshape_test.lsck";
  save_checkpoint(path, c);
  EXPECT_EQ(bytes(load_checkpoint(path)), bytes(c));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::istringstream bad("LSDS\x01\x00\x00\x00");
  EXPECT_THROW(read_checkpoint(bad), io::FormatError);
  std::string truncated = bytes(c).substr(0, 200);
  std::istringstream cut(truncated);
  EXPECT_ANY_THROW(read_checkpoint(cut));
}

TEST(TrainingLog, CsvColumns) {
  std::ostringstream out;
  write_training_log(out, {{1, Stage::Shape, 0.5, 0.25, 0.0, 0.0, 12.4}});
  EXPECT_EQ(out.str(), "epoch,stage,train_loss,val_loss,s_cd,s_p,wall_ms\n1,shape,0.5,0.25,0,0,12\n");
}
