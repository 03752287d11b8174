#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "handaug/errors.hpp"
#include "handaug/hand_model.hpp"

namespace handaug {

enum class Criterion { worst, mean };

// Largest per-joint Euclidean distance, mm.
inline double worst_error(const Skeleton& pred, const Skeleton& gt) {
  double w = 0.0;
  for (std::size_t j = 0; j < kNumJoints; ++j) w = std::max(w, (pred[j] - gt[j]).norm());
  return w;
}

inline double mean_error(const Skeleton& pred, const Skeleton& gt) {
  double s = 0.0;
  for (std::size_t j = 0; j < kNumJoints; ++j) s += (pred[j] - gt[j]).norm();
  return s / static_cast<double>(kNumJoints);
}

inline double frame_error(const Skeleton& pred, const Skeleton& gt, Criterion c) {
  return c == Criterion::worst ? worst_error(pred, gt) : mean_error(pred, gt);
}

struct CurvePoint {
  double epsilon_mm;
  double proportion_percent;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct EvalResult {
  std::vector<double> per_frame_worst_error;
  std::vector<double> per_frame_mean_error;
  std::vector<CurvePoint> curve;
};

// 0, 1, ..., 80 mm.
inline std::vector<double> default_epsilons() {
  std::vector<double> e;
  for (int i = 0; i <= 80; ++i) e.push_back(static_cast<double>(i));
  return e;
}

/// Percentage of frames whose error is strictly below each epsilon.
inline std::vector<CurvePoint> proportion_curve(std::span<const Skeleton> preds, std::span<const Skeleton> gts,
                                                std::span<const double> epsilons, Criterion criterion) {
  if (preds.size() != gts.size()) throw ContractError("prediction and ground-truth counts differ");
  if (preds.empty()) throw ContractError("proportion curve of an empty frame list");
  if (!std::is_sorted(epsilons.begin(), epsilons.end())) throw ContractError("epsilons must be sorted ascending");

  std::vector<double> errors(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) errors[i] = frame_error(preds[i], gts[i], criterion);
  std::sort(errors.begin(), errors.end());

  std::vector<CurvePoint> curve;
  curve.reserve(epsilons.size());
  const double n = static_cast<double>(errors.size());
  for (double eps : epsilons) {
    const auto below = static_cast<double>(std::lower_bound(errors.begin(), errors.end(), eps) - errors.begin());
    curve.push_back({eps, 100.0 * below / n});
  }
  return curve;
}

inline EvalResult evaluate(std::span<const Skeleton> preds, std::span<const Skeleton> gts,
                           std::span<const double> epsilons, Criterion criterion = Criterion::worst) {
  EvalResult r;
  r.curve = proportion_curve(preds, gts, epsilons, criterion);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.per_frame_worst_error.push_back(worst_error(preds[i], gts[i]));
    r.per_frame_mean_error.push_back(mean_error(preds[i], gts[i]));
  }
  return r;
}

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "epsilon_mm,proportion_percent\n";
  for (const auto& p : curve) out << format_fixed6(p.epsilon_mm) << ',' << format_fixed6(p.proportion_percent) << '\n';
}

// Worst and mean criteria side by side; both curves must share the grid.
inline void write_dual_curve_csv(std::ostream& out, std::span<const CurvePoint> worst, std::span<const CurvePoint> mean) {
  if (worst.size() != mean.size()) throw ContractError("curves have different lengths");
  out << "epsilon_mm,worst_pct,mean_pct\n";
  for (std::size_t i = 0; i < worst.size(); ++i)
    out << format_fixed6(worst[i].epsilon_mm) << ',' << format_fixed6(worst[i].proportion_percent) << ','
        << format_fixed6(mean[i].proportion_percent) << '\n';
}

}  // namespace handaug
