#pragma once

// (partial, complete, pose) training triples: generation from procedural
// vehicles, model-disjoint splits, binary storage and fixed-size resampling.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidarshape/geometry.hpp"
#include "lidarshape/io.hpp"
#include "lidarshape/random.hpp"
#include "lidarshape/simulator.hpp"

namespace lidarshape::data {

struct Sample {
  PointCloud partial;   // Sensor frame
  PointCloud complete;  // Canonical frame
  PlanarPose gt_pose;   // Canonical -> Sensor
  std::uint32_t model_id = 0;
  std::uint32_t view_id = 0;
};

struct GenerationConfig {
  std::size_t models = 8;
  std::size_t views_per_model = 16;
  sim::SensorConfig sensor;
  std::size_t n_complete = 1024;
  std::size_t min_points = 16;
  std::size_t max_attempts = 8;
  double min_range = 5.0;
  double max_range = 35.0;
  std::uint64_t seed = 7;

  io::KeyValues to_key_values() const {
    io::KeyValues kv = sensor.to_key_values();
    kv["dataset.models"] = std::to_string(models);
    kv["dataset.views_per_model"] = std::to_string(views_per_model);
    kv["dataset.n_complete"] = std::to_string(n_complete);
    kv["dataset.min_points"] = std::to_string(min_points);
    kv["dataset.max_attempts"] = std::to_string(max_attempts);
    kv["dataset.min_range"] = io::format_real(min_range);
    kv["dataset.max_range"] = io::format_real(max_range);
    kv["dataset.seed"] = std::to_string(seed);
    return kv;
  }

  static GenerationConfig from_key_values(const io::KeyValues& kv) {
    GenerationConfig c;
    c.sensor = sim::SensorConfig::from_key_values(kv);
    auto count = [&](const char* key, std::size_t& dst) {
      if (auto it = kv.find(key); it != kv.end()) dst = std::stoull(it->second);
    };
    count("dataset.models", c.models);
    count("dataset.views_per_model", c.views_per_model);
    count("dataset.n_complete", c.n_complete);
    count("dataset.min_points", c.min_points);
    count("dataset.max_attempts", c.max_attempts);
    if (auto it = kv.find("dataset.min_range"); it != kv.end()) c.min_range = io::parse_real(it->second, "min_range");
    if (auto it = kv.find("dataset.max_range"); it != kv.end()) c.max_range = io::parse_real(it->second, "max_range");
    if (auto it = kv.find("dataset.seed"); it != kv.end()) c.seed = std::stoull(it->second);
    return c;
  }
};

struct SkippedView {
  std::uint32_t model_id;
  std::uint32_t view_id;
  std::size_t last_point_count;
};

struct Dataset {
  GenerationConfig config;
  std::vector<Sample> samples;
  std::vector<SkippedView> skipped;

  std::vector<std::uint32_t> model_ids() const {
    std::set<std::uint32_t> ids;
    for (const auto& s : samples) ids.insert(s.model_id);
    return {ids.begin(), ids.end()};
  }
};

inline constexpr std::size_t planned_pairs(std::size_t models, std::size_t views_per_model) {
  return models * views_per_model;
}

/// Vehicle class and dimensions of model `model_id`; classes cycle so every
/// class is represented once there are at least five models.
inline sim::VehicleSpec model_spec(std::uint32_t model_id, std::uint64_t seed) {
  const auto cls = sim::kAllClasses[model_id % std::size(sim::kAllClasses)];
  return sim::VehicleSpec::sample(cls, derive_seed(seed, {model_id, 1}));
}

/// Generates models x views samples. A scan with fewer than min_points
/// points is re-drawn with a fresh placement up to max_attempts times, then
/// skipped and recorded in Dataset::skipped.
inline Dataset generate(const GenerationConfig& cfg) {
  if (cfg.models == 0 || cfg.views_per_model == 0) throw std::invalid_argument("model and view counts must be >= 1");
  if (cfg.max_attempts == 0) throw std::invalid_argument("max_attempts must be >= 1");
  cfg.sensor.validate();
  Dataset ds;
  ds.config = cfg;
  for (std::uint32_t m = 0; m < cfg.models; ++m) {
    const TriMesh mesh = sim::gen_vehicle_mesh(model_spec(m, cfg.seed));
    const PointCloud complete = sim::uniform_surface_sample(mesh, cfg.n_complete, derive_seed(cfg.seed, {m, 2}));
    for (std::uint32_t v = 0; v < cfg.views_per_model; ++v) {
      std::size_t last = 0;
      bool kept = false;
      for (std::size_t attempt = 0; attempt < cfg.max_attempts && !kept; ++attempt) {
        Rng rng(derive_seed(cfg.seed, {m, v, 3, attempt}));
        const auto placement = sim::sample_placement(rng, cfg.sensor, cfg.min_range, cfg.max_range);
        PointCloud partial = sim::scan(mesh, placement, cfg.sensor, derive_seed(cfg.seed, {m, v, 4, attempt}));
        last = partial.size();
        if (partial.size() >= cfg.min_points) {
          ds.samples.push_back({std::move(partial), complete, placement.pose, m, v});
          kept = true;
        }
      }
      if (!kept) ds.skipped.push_back({m, v, last});
    }
  }
  if (ds.samples.empty()) throw std::runtime_error("dataset generation produced no usable samples");
  return ds;
}

/// Holds out `holdout_models` randomly chosen model ids as validation.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t holdout_models, std::uint64_t seed) {
  auto ids = ds.model_ids();
  if (holdout_models >= ids.size() && holdout_models > 0)
    throw std::invalid_argument("holdout must be smaller than the number of models (" + std::to_string(ids.size()) + ")");
  Rng rng(derive_seed(seed, {0x5b117}));
  rng.shuffle(ids);
  const std::set<std::uint32_t> held(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(holdout_models));
  Dataset train{ds.config, {}, {}}, val{ds.config, {}, {}};
  for (const auto& s : ds.samples) (held.count(s.model_id) ? val : train).samples.push_back(s);
  return {std::move(train), std::move(val)};
}

/// Maps a Sensor-frame partial into the vehicle's Canonical frame.
inline PointCloud canonicalize(const PointCloud& partial, const PlanarPose& pose) {
  PointCloud out = transform_cloud(partial, inverse_pose(pose));
  out.frame = Frame::Canonical;
  return out;
}

/// Exactly n points: uniform subsample without replacement when the cloud is
/// large enough, sampling with replacement otherwise.
inline PointCloud resample_to(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  require_non_empty(cloud);
  Rng rng(seed);
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(n);
  if (cloud.size() >= n) {
    std::vector<std::size_t> idx(cloud.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
      out.points.push_back(cloud.points[idx[i]]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out.points.push_back(cloud.points[rng.index(cloud.size())]);
  }
  return out;
}

// ---------------------------------------------------------------- storage

inline constexpr char kSplitMagic[4] = {'L', 'S', 'D', 'S'};
inline constexpr std::uint32_t kSplitVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw io::FormatError("truncated binary file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

inline void put_cloud(std::ostream& out, const PointCloud& c) {
  put_u32(out, static_cast<std::uint32_t>(c.size()));
  for (const auto& p : c.points) {
    put_f32(out, p.x);
    put_f32(out, p.y);
    put_f32(out, p.z);
  }
}

inline PointCloud get_cloud(std::istream& in, Frame frame) {
  PointCloud c;
  c.frame = frame;
  const std::uint32_t n = get_u32(in);
  c.points.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const float x = get_f32(in), y = get_f32(in), z = get_f32(in);
    c.points.push_back({x, y, z});
  }
  return c;
}

}  // namespace detail

/// Writes a split and returns the byte offset of each sample record.
inline std::vector<std::uint64_t> write_split(std::ostream& out, const std::vector<Sample>& samples) {
  std::vector<std::uint64_t> offsets;
  std::uint64_t pos = 0;
  std::ostringstream buf;
  buf.write(kSplitMagic, 4);
  detail::put_u32(buf, kSplitVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    pos = static_cast<std::uint64_t>(buf.tellp());
    offsets.push_back(pos);
    detail::put_u32(buf, s.model_id);
    detail::put_u32(buf, s.view_id);
    detail::put_cloud(buf, s.partial);
    detail::put_cloud(buf, s.complete);
    detail::put_f32(buf, s.gt_pose.yaw());
    detail::put_f32(buf, s.gt_pose.tx());
    detail::put_f32(buf, s.gt_pose.ty());
    detail::put_f32(buf, s.gt_pose.tz());
  }
  out << buf.str();
  return offsets;
}

inline std::vector<Sample> read_split(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kSplitMagic, 4) != 0) throw io::FormatError("not an LSDS split file");
  const std::uint32_t version = detail::get_u32(in);
  if (version != kSplitVersion) throw io::FormatError("unsupported LSDS version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(in);
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s;
    s.model_id = detail::get_u32(in);
    s.view_id = detail::get_u32(in);
    s.partial = detail::get_cloud(in, Frame::Sensor);
    s.complete = detail::get_cloud(in, Frame::Canonical);
    const float yaw = detail::get_f32(in), tx = detail::get_f32(in), ty = detail::get_f32(in), tz = detail::get_f32(in);
    s.gt_pose = PlanarPose(yaw, tx, ty, tz);
    samples.push_back(std::move(s));
  }
  return samples;
}

inline std::vector<std::uint64_t> save_split(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::vector<std::uint64_t> offsets;
  io::write_atomically(path, [&](std::ostream& out) { offsets = write_split(out, samples); }, true);
  return offsets;
}

inline std::vector<Sample> load_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_split(in);
}

struct ManifestEntry {
  std::uint32_t model_id;
  std::uint32_t view_id;
  std::string split;
  std::uint64_t offset;
};

struct Manifest {
  std::uint32_t format_version = kSplitVersion;
  io::KeyValues config;
  std::vector<ManifestEntry> entries;
};

inline void write_manifest(std::ostream& out, const Manifest& m) {
  out << "format_version=" << m.format_version << '\n';
  io::write_key_values(out, m.config);
  for (const auto& e : m.entries)
    out << "sample=" << e.model_id << ' ' << e.view_id << ' ' << e.split << ' ' << e.offset << '\n';
}

inline Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw io::FormatError("bad manifest line: " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "format_version") {
      m.format_version = static_cast<std::uint32_t>(std::stoul(value));
    } else if (key == "sample") {
      std::istringstream ls(value);
      ManifestEntry e{};
      if (!(ls >> e.model_id >> e.view_id >> e.split >> e.offset)) throw io::FormatError("bad manifest sample: " + line);
      m.entries.push_back(e);
    } else {
      m.config[key] = value;
    }
  }
  return m;
}

inline constexpr const char* kTrainFile = "train.lsds";
inline constexpr const char* kValFile = "val.lsds";
inline constexpr const char* kManifestFile = "manifest.txt";

/// Writes train.lsds, val.lsds and manifest.txt into `dir`.
inline Manifest save_dataset(const std::filesystem::path& dir, const Dataset& train, const Dataset& val,
                             std::size_t holdout_models, std::uint64_t split_seed) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.config = train.config.to_key_values();
  m.config["split.holdout_models"] = std::to_string(holdout_models);
  m.config["split.seed"] = std::to_string(split_seed);
  const auto train_off = save_split(dir / kTrainFile, train.samples);
  const auto val_off = save_split(dir / kValFile, val.samples);
  for (std::size_t i = 0; i < train.samples.size(); ++i)
    m.entries.push_back({train.samples[i].model_id, train.samples[i].view_id, "train", train_off[i]});
  for (std::size_t i = 0; i < val.samples.size(); ++i)
    m.entries.push_back({val.samples[i].model_id, val.samples[i].view_id, "val", val_off[i]});
  io::write_atomically(dir / kManifestFile, [&](std::ostream& out) { write_manifest(out, m); });
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_manifest(in);
}

}  // namespace lidarshape::data
