#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lidarshape/dataset.hpp"
#include "lidarshape/io.hpp"

namespace fs = std::filesystem;
using namespace lidarshape;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "lidarshape_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const auto out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(LIDARSHAPE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string path(const fs::path& p) { return p.string(); }

// Small dataset and three trained architectures shared by the pipeline tests.
const fs::path& trained() {
  static const fs::path dir = [] {
    const auto d = work_dir() / "pipeline";
    auto r = run("gen-dataset --models 3 --views 2 --holdout 1 --n-complete 128 --out-dir " + path(d / "data"));
    EXPECT_EQ(r.code, 0) << r.err;
    for (const char* arch : {"baseline", "shared_encoder", "joint_se"}) {
      r = run(std::string("train --arch ") + arch + " --data " + path(d / "data") +
              " --epochs 1 --batch 2 --lr 1e-3 --input-points 32 --coarse-points 8 --grid-size 2 --out-dir " +
              path(d / "ckpt"));
      EXPECT_EQ(r.code, 0) << r.err;
    }
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Help, ListsFlagsWithDefaults) {
  const auto gen = run("gen-dataset --help");
  EXPECT_EQ(gen.code, 0);
  for (const char* s : {"--seed", "--config", "--out-dir", "--threads", "--models", "--views", "--holdout",
                        "--n-complete", "--min-points", "--max-attempts", "--min-range", "--max-range",
                        "--azimuth-step", "--sensor-height", "--noise"})
    EXPECT_NE(gen.out.find(s), std::string::npos) << s;
  for (const char* s : {"[8]", "[16]", "[2]", "[1024]", "[7]", "[5]", "[35]", "[1]"})
    EXPECT_NE(gen.out.find(s), std::string::npos) << "gen default " << s;

  const auto tr = run("train --help");
  EXPECT_EQ(tr.code, 0);
  for (const char* s : {"--data", "--arch", "--epochs", "--batch", "--lr", "--resume", "[200]", "[8]", "[0.0001]",
                        "[joint_se]", "[128]", "[64]", "[4]"})
    EXPECT_NE(tr.out.find(s), std::string::npos) << "train " << s;

  const auto ev = run("eval --help");
  for (const char* s : {"--data", "--arch", "--checkpoint", "--checkpoint-dir", "--split", "[all]", "[val]"})
    EXPECT_NE(ev.out.find(s), std::string::npos) << "eval " << s;
  const auto inf = run("infer --help");
  for (const char* s : {"--checkpoint", "--input", "--seed"}) EXPECT_NE(inf.out.find(s), std::string::npos) << s;
  const auto ex = run("export-mesh --help");
  for (const char* s : {"--model-id", "--class", "--name", "[vehicle.obj]"})
    EXPECT_NE(ex.out.find(s), std::string::npos) << s;
}

TEST(GenDataset, SameSeedTwiceGivesIdenticalBytes) {
  const auto a = work_dir() / "gen_a", b = work_dir() / "gen_b";
  ASSERT_EQ(run("gen-dataset --models 8 --views 16 --seed 7 --out-dir " + path(a)).code, 0);
  ASSERT_EQ(run("gen-dataset --models 8 --views 16 --seed 7 --out-dir " + path(b)).code, 0);
  for (const char* f : {data::kTrainFile, data::kValFile, data::kManifestFile}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const auto m = data::load_manifest(a / data::kManifestFile);
  EXPECT_LE(m.entries.size(), 128u);
}

TEST(GenDataset, ConfigFileSuppliesDefaultsAndFlagsWin) {
  const auto cfg = work_dir() / "gen.cfg";
  std::ofstream(cfg) << "models=3\nviews=3\nn-complete=64\nholdout=1\n";
  const auto a = work_dir() / "cfg_a", b = work_dir() / "cfg_b";
  ASSERT_EQ(run("gen-dataset --config " + path(cfg) + " --out-dir " + path(a)).code, 0);
  ASSERT_EQ(run("gen-dataset --config " + path(cfg) + " --views 2 --out-dir " + path(b)).code, 0);
  const auto ma = data::load_manifest(a / data::kManifestFile), mb = data::load_manifest(b / data::kManifestFile);
  EXPECT_EQ(data::GenerationConfig::from_key_values(ma.config).views_per_model, 3u);
  EXPECT_EQ(data::GenerationConfig::from_key_values(mb.config).views_per_model, 2u);
  EXPECT_EQ(data::GenerationConfig::from_key_values(mb.config).n_complete, 64u);
}

TEST(Pipeline, TrainWritesCheckpointsAndLogs) {
  const auto ck = trained() / "ckpt";
  for (const char* f : {"baseline.lsck", "shared_encoder.lsck", "joint_se.lsck", "joint_se.shape.lsck",
                        "joint_se.pose_frozen.lsck", "joint_se.joint.lsck", "baseline.baseline_pose.lsck",
                        "joint_se_train_log.csv"})
    EXPECT_TRUE(fs::exists(ck / f)) << f;
  const auto log = slurp(ck / "joint_se_train_log.csv");
  EXPECT_EQ(log.rfind("epoch,stage,train_loss,val_loss,s_cd,s_p,wall_ms\n", 0), 0u);
  EXPECT_NE(log.find("\n1,joint,"), std::string::npos);
}

TEST(Pipeline, EvalAllWritesOneCsvPerArchitecture) {
  const auto out = trained() / "eval";
  const auto r = run("eval --arch all --data " + path(trained() / "data") + " --checkpoint-dir " +
                     path(trained() / "ckpt") + " --out-dir " + path(out));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* arch : {"baseline", "shared_encoder", "joint_se"}) {
    const auto csv = slurp(out / (std::string("eval_") + arch + ".csv"));
    EXPECT_EQ(csv.rfind("model_id,view_id,cd,heading_err,trans_err\n", 0), 0u) << arch;
    EXPECT_TRUE(fs::exists(out / (std::string("curves_") + arch + ".csv")));
  }
  const auto summary = slurp(out / "eval_summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 4);
}

TEST(Pipeline, InferWritesPoseAndFineCompletion) {
  const auto samples = data::load_split(trained() / "data" / data::kTrainFile);
  const auto ply = work_dir() / "partial.ply";
  io::save_ply(ply, samples.front().partial);
  const auto out = work_dir() / "infer";
  const auto r = run("infer --checkpoint " + path(trained() / "ckpt" / "joint_se.lsck") + " --input " + path(ply) +
                     " --out-dir " + path(out));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto completion = io::load_ply(out / "completion.ply");
  EXPECT_EQ(completion.size(), 8u * 2u * 2u);
  const auto pose = io::load_key_values(out / "pose.txt");
  for (const char* k : {"yaw_rad", "yaw_deg", "tx", "ty", "tz"}) EXPECT_TRUE(pose.count(k)) << k;
}

TEST(Pipeline, CommandsDoNotMutateInputs) {
  const auto data_dir = trained() / "data";
  const auto before = slurp(data_dir / data::kTrainFile) + slurp(data_dir / data::kValFile);
  const auto ckpt_before = slurp(trained() / "ckpt" / "joint_se.lsck");
  ASSERT_EQ(run("eval --arch joint_se --data " + path(data_dir) + " --checkpoint " +
                path(trained() / "ckpt" / "joint_se.lsck") + " --out-dir " + path(work_dir() / "eval_single"))
                .code,
            0);
  EXPECT_EQ(slurp(data_dir / data::kTrainFile) + slurp(data_dir / data::kValFile), before);
  EXPECT_EQ(slurp(trained() / "ckpt" / "joint_se.lsck"), ckpt_before);
}

TEST(ExportMesh, WritesObj) {
  const auto out = work_dir() / "mesh";
  ASSERT_EQ(run("export-mesh --class bus --out-dir " + path(out)).code, 0);
  const auto mesh = io::load_obj(out / "vehicle.obj");
  EXPECT_FALSE(mesh.empty());
  EXPECT_GT(mesh.bounds().extent().x, 9.0);
  ASSERT_EQ(run("export-mesh --model-id 3 --name m3.obj --out-dir " + path(out)).code, 0);
  EXPECT_TRUE(fs::exists(out / "m3.obj"));
}

TEST(ExitCodes, UsageErrorsAreOneAndLeaveNoOutput) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("gen-dataset --bogus 3").code, 1);
  EXPECT_EQ(run("gen-dataset --models zero").code, 1);
  EXPECT_EQ(run("train --epochs 1").code, 1);  // --data is required
  EXPECT_EQ(run("train --data /nonexistent/dir").code, 1);
  EXPECT_EQ(run("train --data " + path(trained() / "data") + " --arch resnet").code, 1);
  const auto bad = work_dir() / "never_created";
  const auto r = run("gen-dataset --models 2 --holdout 2 --out-dir " + path(bad));
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_FALSE(fs::exists(bad));
  EXPECT_EQ(run("eval --data " + path(trained() / "data") + " --checkpoint-dir " + path(work_dir()) +
                " --out-dir " + path(bad))
                .code,
            1);
  EXPECT_FALSE(fs::exists(bad));
}

TEST(ExitCodes, RuntimeFailuresAreTwoAndLeaveNoPartialFiles) {
  const auto corrupt = work_dir() / "corrupt.lsck";
  std::ofstream(corrupt) << "LSCK garbage";
  const auto ply = work_dir() / "partial2.ply";
  io::save_ply(ply, data::load_split(trained() / "data" / data::kTrainFile).front().partial);
  const auto out = work_dir() / "infer_fail";
  const auto r = run("infer --checkpoint " + path(corrupt) + " --input " + path(ply) + " --out-dir " + path(out));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_FALSE(fs::exists(out / "pose.txt"));
  EXPECT_FALSE(fs::exists(out / "completion.ply"));

  // a checkpoint of the wrong architecture fails before any CSV is written
  const auto mixed = work_dir() / "mixed";
  fs::create_directories(mixed);
  fs::copy_file(trained() / "ckpt" / "baseline.lsck", mixed / "baseline.lsck");
  fs::copy_file(trained() / "ckpt" / "baseline.lsck", mixed / "shared_encoder.lsck");
  fs::copy_file(trained() / "ckpt" / "joint_se.lsck", mixed / "joint_se.lsck");
  const auto ev = work_dir() / "eval_fail";
  EXPECT_EQ(run("eval --data " + path(trained() / "data") + " --checkpoint-dir " + path(mixed) + " --out-dir " +
                path(ev))
                .code,
            2);
  EXPECT_FALSE(fs::exists(ev / "eval_baseline.csv"));
  EXPECT_FALSE(fs::exists(ev / "eval_summary.csv"));
}
