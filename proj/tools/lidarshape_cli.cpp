// lidarshape: dataset generation, training, evaluation, inference and mesh
// export from the command line.
//
// Every subcommand accepts --config FILE with key=value lines whose keys are
// the long flag names (e.g. "epochs=50"); flags on the command line win.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lidarshape/dataset.hpp"
#include "lidarshape/eval.hpp"
#include "lidarshape/io.hpp"
#include "lidarshape/simulator.hpp"
#include "lidarshape/training.hpp"

namespace fs = std::filesystem;
using namespace lidarshape;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct Shared {
  std::uint64_t seed = 0;
  std::string config;
  std::string out_dir = ".";
  std::size_t threads = 1;
};

void add_shared(CLI::App* cmd, Shared& s, std::uint64_t default_seed) {
  s.seed = default_seed;
  cmd->add_option("--seed", s.seed, "Seed for all randomness");
  cmd->add_option("--config", s.config, "key=value file supplying defaults for the flags of this command")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", s.out_dir, "Output directory");
  cmd->add_option("--threads", s.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
}

// Turns `cmd --config f.txt ...` into `cmd --k1=v1 --k2=v2 ... --config f.txt ...`
// so later (explicit) occurrences override the file.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || args.empty() || !fs::exists(path)) return args;
  std::vector<std::string> out{args.front()};
  for (const auto& [key, value] : io::load_key_values(path)) out.push_back("--" + key + "=" + value);
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

// ---------------------------------------------------------------- gen-dataset

struct GenArgs {
  Shared shared;
  data::GenerationConfig gen;
  std::size_t holdout = 2;
  double noise = 0.0;
};

void setup_gen(CLI::App& app, GenArgs& a) {
  auto* cmd = app.add_subcommand("gen-dataset", "Simulate partial scans of procedural vehicles and write train/val splits");
  add_shared(cmd, a.shared, a.gen.seed);
  cmd->add_option("--models", a.gen.models, "Number of procedural vehicle models")->check(CLI::PositiveNumber);
  cmd->add_option("--views", a.gen.views_per_model, "Scans per model")->check(CLI::PositiveNumber);
  cmd->add_option("--holdout", a.holdout, "Models held out for validation");
  cmd->add_option("--n-complete", a.gen.n_complete, "Points in each complete ground-truth cloud")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--min-points", a.gen.min_points, "Minimum points for a scan to be kept");
  cmd->add_option("--max-attempts", a.gen.max_attempts, "Placements tried per view before skipping it")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--min-range", a.gen.min_range, "Minimum sensor-to-vehicle distance (m)")->check(CLI::PositiveNumber);
  cmd->add_option("--max-range", a.gen.max_range, "Maximum sensor-to-vehicle distance (m)")->check(CLI::PositiveNumber);
  cmd->add_option("--azimuth-step", a.gen.sensor.azimuth_step_deg, "Sensor azimuth resolution (deg)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--sensor-height", a.gen.sensor.height, "Sensor height above the ground (m)");
  cmd->add_option("--noise", a.noise, "Gaussian range noise sigma (m)")->check(CLI::NonNegativeNumber);
}

int run_gen(GenArgs& a) {
  a.gen.seed = a.shared.seed;
  a.gen.sensor.range_noise_sigma = a.noise;
  if (a.gen.min_range > a.gen.max_range) throw CLI::ValidationError("--min-range must not exceed --max-range");
  if (a.holdout >= a.gen.models && a.holdout > 0) throw CLI::ValidationError("--holdout must be less than --models");
  a.gen.sensor.validate();
  const auto ds = data::generate(a.gen);
  const auto [train, val] = data::split(ds, a.holdout, a.gen.seed);
  const auto dir = ensure_dir(a.shared.out_dir);
  data::save_dataset(dir, train, val, a.holdout, a.gen.seed);
  std::cout << "generated " << ds.samples.size() << " samples (" << train.samples.size() << " train, "
            << val.samples.size() << " val, " << ds.skipped.size() << " views skipped) in " << dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Shared shared;
  train::TrainConfig cfg;
  NetConfig net;
  std::string data_dir;
  std::string arch = "joint_se";
  std::string resume;
};

void setup_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train one architecture with its staged protocol");
  add_shared(cmd, a.shared, a.cfg.seed);
  cmd->add_option("--data", a.data_dir, "Dataset directory written by gen-dataset")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--arch", a.arch, "baseline, shared_encoder or joint_se")
      ->check(CLI::IsMember({"baseline", "shared_encoder", "joint_se"}));
  cmd->add_option("--epochs", a.cfg.epochs, "Epochs per stage");
  cmd->add_option("--batch", a.cfg.batch, "Batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", a.cfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--input-points", a.net.input_points, "Points fed to the encoder per sample")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--coarse-points", a.net.n_coarse, "Coarse completion points")->check(CLI::PositiveNumber);
  cmd->add_option("--grid-size", a.net.grid_size, "Folding grid side length")->check(CLI::PositiveNumber);
  cmd->add_option("--resume", a.resume, "Checkpoint whose stage history is a prefix of the protocol")
      ->check(CLI::ExistingFile);
}

int run_train(TrainArgs& a) {
  a.cfg.seed = a.shared.seed;
  a.cfg.threads = a.shared.threads;
  a.cfg.validate();
  const auto protocol = train::parse_protocol(a.arch);
  const fs::path data_dir(a.data_dir);
  const auto train_set = data::load_split(data_dir / data::kTrainFile);
  const auto val_set = data::load_split(data_dir / data::kValFile);
  std::optional<train::Checkpoint> resume;
  if (!a.resume.empty()) resume = train::load_checkpoint(a.resume);
  const auto out = ensure_dir(a.shared.out_dir);

  std::vector<train::EpochLog> log;
  auto observer = [&](const train::EpochLog& e) {
    std::cout << train::stage_name(e.stage) << " epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss
              << '\n';
    return true;
  };
  const auto run = train::run_protocol(protocol, train_set, val_set, a.cfg, resume ? resume->model.net : a.net, observer,
                                       resume ? &*resume : nullptr);
  for (const auto& st : run.stages) {
    log.insert(log.end(), st.log.begin(), st.log.end());
    train::save_checkpoint(out / (std::string(train::protocol_name(protocol)) + "." +
                                  train::stage_name(st.best.stage) + ".lsck"),
                           st.best);
  }
  const std::string stem = train::protocol_name(protocol);
  train::save_checkpoint(out / (stem + ".lsck"), run.final);
  io::write_atomically(out / (stem + "_train_log.csv"), [&](std::ostream& os) { train::write_training_log(os, log); });
  std::cout << "wrote " << (out / (stem + ".lsck")).string() << " (best " << train::stage_name(run.final.stage)
            << " val " << run.final.best_val << " at epoch " << run.final.epoch << ")\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Shared shared;
  std::string data_dir;
  std::string arch = "all";
  std::string checkpoint;
  std::string checkpoint_dir;
  std::string split = "val";
};

void setup_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Score checkpoints on a split and write per-sample and threshold-curve CSVs");
  add_shared(cmd, a.shared, 0);
  cmd->add_option("--data", a.data_dir, "Dataset directory written by gen-dataset")->required()->check(CLI::ExistingDirectory);
  cmd->add_option("--arch", a.arch, "all, baseline, shared_encoder or joint_se")
      ->check(CLI::IsMember({"all", "baseline", "shared_encoder", "joint_se"}));
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file (single architecture only)")->check(CLI::ExistingFile);
  cmd->add_option("--checkpoint-dir", a.checkpoint_dir,
                  "Directory holding <arch>.lsck files (defaults to --out-dir)");
  cmd->add_option("--split", a.split, "train or val")->check(CLI::IsMember({"train", "val"}));
}

int run_eval(EvalArgs& a) {
  if (!a.checkpoint.empty() && a.arch == "all") throw CLI::ValidationError("--checkpoint needs a single --arch");
  std::vector<std::string> archs =
      a.arch == "all" ? std::vector<std::string>{"baseline", "shared_encoder", "joint_se"} : std::vector<std::string>{a.arch};
  const fs::path ckpt_dir = a.checkpoint_dir.empty() ? fs::path(a.shared.out_dir) : fs::path(a.checkpoint_dir);
  std::vector<fs::path> ckpts;
  for (const auto& arch : archs) {
    fs::path p = a.checkpoint.empty() ? ckpt_dir / (arch + ".lsck") : fs::path(a.checkpoint);
    if (!fs::exists(p)) throw CLI::ValidationError("missing checkpoint " + p.string());
    ckpts.push_back(p);
  }
  const auto samples = data::load_split(fs::path(a.data_dir) / (a.split == "val" ? data::kValFile : data::kTrainFile));
  // Everything is loaded, checked and scored before the first file is written.
  std::vector<std::vector<eval::EvalRecord>> results;
  for (std::size_t i = 0; i < archs.size(); ++i) {
    const auto ckpt = train::load_checkpoint(ckpts[i]);
    const auto expected = train::parse_protocol(archs[i]) == train::Protocol::Baseline ? Architecture::Baseline
                                                                                      : Architecture::SharedEncoder;
    if (ckpt.model.arch != expected)
      throw std::runtime_error(ckpts[i].string() + " holds a " + architecture_name(ckpt.model.arch) + " model");
    results.push_back(eval::evaluate(ckpt, samples, a.shared.threads));
  }
  const auto out = ensure_dir(a.shared.out_dir);
  std::ostringstream summary;
  summary << "arch,samples,mean_cd,mean_heading_err,mean_trans_err\n";
  for (std::size_t i = 0; i < archs.size(); ++i) {
    const auto& records = results[i];
    io::write_atomically(out / ("eval_" + archs[i] + ".csv"), [&](std::ostream& os) { eval::write_records_csv(os, records); });
    io::write_atomically(out / ("curves_" + archs[i] + ".csv"), [&](std::ostream& os) { eval::write_curves_csv(os, records); });
    const auto s = eval::summarize(records);
    summary << archs[i] << ',' << records.size() << ',' << io::format_real(s.mean_cd) << ','
            << io::format_real(s.mean_heading_err) << ',' << io::format_real(s.mean_trans_err) << '\n';
    std::cout << archs[i] << ": mean cd " << s.mean_cd << " m, heading " << s.mean_heading_err << " deg, translation "
              << s.mean_trans_err << " m over " << records.size() << " samples\n";
  }
  io::write_atomically(out / "eval_summary.csv", [&](std::ostream& os) { os << summary.str(); });
  return 0;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  Shared shared;
  std::string checkpoint;
  std::string input;
};

void setup_infer(CLI::App& app, InferArgs& a) {
  auto* cmd = app.add_subcommand("infer", "Estimate pose and completion for one Sensor-frame PLY cloud");
  add_shared(cmd, a.shared, 0);
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--input", a.input, "ASCII PLY partial cloud in the Sensor frame")->required()->check(CLI::ExistingFile);
}

int run_infer(InferArgs& a) {
  const auto ckpt = train::load_checkpoint(a.checkpoint);
  PointCloud partial = io::load_ply(a.input);
  if (partial.frame != Frame::Sensor) throw std::runtime_error("input cloud must be in the Sensor frame");
  require_non_empty(partial);
  require_finite(partial);
  const auto input = data::resample_to(partial, ckpt.model.net.input_points, derive_seed(a.shared.seed, {0x1f3}));
  const auto pred = forward(input, ckpt.model);
  const auto out = ensure_dir(a.shared.out_dir);
  io::write_atomically(out / "pose.txt", [&](std::ostream& os) {
    io::KeyValues kv;
    kv["yaw_rad"] = io::format_real(pred.pose.yaw());
    kv["yaw_deg"] = io::format_real(pred.pose.yaw() * 180.0 / std::numbers::pi);
    kv["tx"] = io::format_real(pred.pose.tx());
    kv["ty"] = io::format_real(pred.pose.ty());
    kv["tz"] = io::format_real(pred.pose.tz());
    io::write_key_values(os, kv);
  });
  io::save_ply(out / "completion.ply", pred.completion);
  std::cout << "yaw " << pred.pose.yaw() << " rad, t (" << pred.pose.tx() << ", " << pred.pose.ty() << ", "
            << pred.pose.tz() << "), " << pred.completion.size() << " completion points\n";
  return 0;
}

// ---------------------------------------------------------------- export-mesh

struct ExportArgs {
  Shared shared;
  std::uint32_t model_id = 0;
  std::string vehicle_class;
  std::string name = "vehicle.obj";
};

void setup_export(CLI::App& app, ExportArgs& a) {
  auto* cmd = app.add_subcommand("export-mesh", "Write a procedural vehicle mesh (Canonical frame) as OBJ");
  add_shared(cmd, a.shared, data::GenerationConfig{}.seed);
  cmd->add_option("--model-id", a.model_id, "Dataset model id; with the dataset --seed this reproduces its mesh");
  cmd->add_option("--class", a.vehicle_class, "Sample this class (sedan, suv, truck, van, bus) instead of a model id")
      ->check(CLI::IsMember({"sedan", "suv", "truck", "van", "bus"}, CLI::ignore_case));
  cmd->add_option("--name", a.name, "Output file name inside --out-dir");
}

int run_export(ExportArgs& a) {
  const auto spec = a.vehicle_class.empty() ? data::model_spec(a.model_id, a.shared.seed)
                                            : sim::VehicleSpec::sample(sim::parse_class(a.vehicle_class), a.shared.seed);
  const auto mesh = sim::gen_vehicle_mesh(spec);
  const auto out = ensure_dir(a.shared.out_dir);
  io::save_obj(out / a.name, mesh);
  std::cout << sim::class_name(spec.vehicle_class) << " mesh with " << mesh.vertices().size() << " vertices and "
            << mesh.triangles().size() << " triangles written to " << (out / a.name).string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint pose and shape estimation of vehicles from partial LiDAR scans"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenArgs gen;
  TrainArgs tr;
  EvalArgs ev;
  InferArgs inf;
  ExportArgs ex;
  setup_gen(app, gen);
  setup_train(app, tr);
  setup_eval(app, ev);
  setup_infer(app, inf);
  setup_export(app, ex);

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (app.got_subcommand("gen-dataset")) return run_gen(gen);
    if (app.got_subcommand("train")) return run_train(tr);
    if (app.got_subcommand("eval")) return run_eval(ev);
    if (app.got_subcommand("infer")) return run_infer(inf);
    if (app.got_subcommand("export-mesh")) return run_export(ex);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
