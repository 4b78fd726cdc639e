#pragma once

// Per-sample completion and pose metrics and ratio-under-threshold curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lidarshape/dataset.hpp"
#include "lidarshape/geometry.hpp"
#include "lidarshape/io.hpp"
#include "lidarshape/losses.hpp"
#include "lidarshape/networks.hpp"
#include "lidarshape/training.hpp"

namespace lidarshape::eval {

struct EvalRecord {
  std::uint32_t model_id = 0;
  std::uint32_t view_id = 0;
  double cd = 0.0;           // meters
  double heading_err = 0.0;  // degrees
  double trans_err = 0.0;    // meters
};

class FrameMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Predictor = std::function<Prediction(const data::Sample&)>;

/// Metrics of one prediction. The ground truth complete cloud is posed into
/// the Sensor frame, which is where every architecture returns completions.
inline EvalRecord score(const data::Sample& s, const Prediction& pred) {
  PointCloud gt = transform_cloud(s.complete, s.gt_pose);
  gt.frame = Frame::Sensor;
  if (pred.completion.frame != gt.frame)
    throw FrameMismatch(std::string("completion is in the ") + frame_name(pred.completion.frame) +
                        " frame but the ground truth is in the " + frame_name(gt.frame) + " frame");
  EvalRecord r;
  r.model_id = s.model_id;
  r.view_id = s.view_id;
  r.cd = chamfer(pred.completion, gt);
  r.heading_err = heading_error(pred.pose.yaw(), s.gt_pose.yaw());
  r.trans_err = translation_error(pred.pose, s.gt_pose);
  if (!std::isfinite(r.cd) || !std::isfinite(r.heading_err) || !std::isfinite(r.trans_err))
    throw std::runtime_error("non-finite metric for sample " + std::to_string(s.model_id) + "/" +
                             std::to_string(s.view_id));
  return r;
}

/// Scores every sample; records are ordered by (model_id, view_id) so the
/// result does not depend on the split's order or the thread count.
inline std::vector<EvalRecord> evaluate(const Predictor& predict, const std::vector<data::Sample>& split,
                                        std::size_t threads = 1) {
  if (split.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  std::vector<EvalRecord> out(split.size());
  std::vector<std::exception_ptr> errors(std::max<std::size_t>(threads, 1));
  auto work = [&](std::size_t w, std::size_t workers) {
    try {
      for (std::size_t i = w; i < split.size(); i += workers) out[i] = score(split[i], predict(split[i]));
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(errors.size(), split.size());
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::sort(out.begin(), out.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return a.model_id != b.model_id ? a.model_id < b.model_id : a.view_id < b.view_id;
  });
  return out;
}

/// Runs the model's forward pass on each sample's network input.
inline std::vector<EvalRecord> evaluate(const ModelParams& model, const std::vector<data::Sample>& split,
                                        std::size_t threads = 1) {
  return evaluate(
      [&](const data::Sample& s) { return forward(train::network_input(s, model.net.input_points), model); }, split,
      threads);
}

inline std::vector<EvalRecord> evaluate(const train::Checkpoint& ckpt, const std::vector<data::Sample>& split,
                                        std::size_t threads = 1) {
  return evaluate(ckpt.model, split, threads);
}

struct Summary {
  double mean_cd = 0.0;
  double mean_heading_err = 0.0;
  double mean_trans_err = 0.0;
};

inline Summary summarize(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("no records to summarize");
  Summary s;
  for (const auto& r : records) {
    s.mean_cd += r.cd;
    s.mean_heading_err += r.heading_err;
    s.mean_trans_err += r.trans_err;
  }
  const double n = static_cast<double>(records.size());
  s.mean_cd /= n;
  s.mean_heading_err /= n;
  s.mean_trans_err /= n;
  return s;
}

// ---------------------------------------------------------------- curves

struct ThresholdCurve {
  std::vector<double> thresholds;
  std::vector<double> ratios;
};

inline ThresholdCurve threshold_curve(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  if (errors.empty()) throw std::invalid_argument("threshold curve of an empty error list");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] >= thresholds[i - 1])) throw std::invalid_argument("thresholds must be ascending");
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  ThresholdCurve c{thresholds, {}};
  c.ratios.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    c.ratios.push_back(static_cast<double>(count) / static_cast<double>(sorted.size()));
  }
  return c;
}

/// lo, lo+step, ..., hi (inclusive), computed by index to avoid drift.
inline std::vector<double> threshold_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw std::invalid_argument("bad threshold grid");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + static_cast<double>(i) * step;
  return g;
}

inline std::vector<double> default_cd_thresholds() { return threshold_grid(0.0, 2.0, 0.05); }
inline std::vector<double> default_heading_thresholds() { return threshold_grid(0.0, 90.0, 1.0); }
inline std::vector<double> default_translation_thresholds() { return threshold_grid(0.0, 2.0, 0.05); }

enum class Metric { Cd, Heading, Translation };

inline std::vector<double> metric_values(const std::vector<EvalRecord>& records, Metric m) {
  std::vector<double> v;
  v.reserve(records.size());
  for (const auto& r : records)
    v.push_back(m == Metric::Cd ? r.cd : m == Metric::Heading ? r.heading_err : r.trans_err);
  return v;
}

// ---------------------------------------------------------------- CSV

inline void write_records_csv(std::ostream& out, const std::vector<EvalRecord>& records) {
  out << "model_id,view_id,cd,heading_err,trans_err\n";
  for (const auto& r : records)
    out << r.model_id << ',' << r.view_id << ',' << io::format_real(r.cd) << ',' << io::format_real(r.heading_err)
        << ',' << io::format_real(r.trans_err) << '\n';
}

/// Long format: one row per (curve, threshold) with the default grids.
inline void write_curves_csv(std::ostream& out, const std::vector<EvalRecord>& records) {
  const auto cd = threshold_curve(metric_values(records, Metric::Cd), default_cd_thresholds());
  const auto hd = threshold_curve(metric_values(records, Metric::Heading), default_heading_thresholds());
  const auto tr = threshold_curve(metric_values(records, Metric::Translation), default_translation_thresholds());
  out << "curve,threshold,ratio\n";
  auto emit = [&](const char* name, const ThresholdCurve& c) {
    for (std::size_t i = 0; i < c.thresholds.size(); ++i)
      out << name << ',' << io::format_real(c.thresholds[i]) << ',' << io::format_real(c.ratios[i]) << '\n';
  };
  emit("cd", cd);
  emit("heading", hd);
  emit("translation", tr);
}

}  // namespace lidarshape::eval
