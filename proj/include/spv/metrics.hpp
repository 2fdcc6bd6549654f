#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "spv/error.hpp"

namespace spv {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  bool operator==(const PrPoint&) const = default;
};

namespace detail {

inline std::vector<std::size_t> order_by_score(std::span<const double> scores, const std::vector<bool>& genuine) {
  if (scores.size() != genuine.size()) throw data_error("scores and labels differ in length");
  for (double s : scores)
    if (std::isnan(s)) throw data_error("scores must not be NaN");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

} // namespace detail

// Threshold sweep from +inf downwards; one point per distinct score, starting
// at (0,0) and ending at (1,1). Higher scores mean "genuine".
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, const std::vector<bool>& genuine) {
  const auto order = detail::order_by_score(scores, genuine);
  const auto pos = static_cast<std::size_t>(std::count(genuine.begin(), genuine.end(), true));
  const std::size_t neg = genuine.size() - pos;
  if (pos == 0 || neg == 0) throw data_error("ROC needs both genuine and impostor scores");

  std::vector<RocPoint> roc{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (genuine[order[i]] ? tp : fp)++;
    roc.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  return roc;
}

// Area under the ROC over fpr in [0, max_fpr] divided by max_fpr.
inline double partial_auc(std::span<const RocPoint> roc, double max_fpr) {
  if (!(max_fpr > 0.0 && max_fpr <= 1.0)) throw config_error("max_fpr must lie in (0, 1]");
  if (roc.size() < 2) throw data_error("ROC needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    const auto& a = roc[i - 1];
    const auto& b = roc[i];
    if (a.fpr >= max_fpr) break;
    if (b.fpr <= a.fpr) continue;
    const double x1 = std::min(b.fpr, max_fpr);
    const double y1 = a.tpr + (b.tpr - a.tpr) * (x1 - a.fpr) / (b.fpr - a.fpr);
    area += 0.5 * ((x1 - a.fpr) / max_fpr) * (a.tpr + y1);
  }
  return std::clamp(area, 0.0, 1.0);
}

inline double pauc20(std::span<const RocPoint> roc) { return partial_auc(roc, 0.2); }

inline double auc(std::span<const RocPoint> roc) { return partial_auc(roc, 1.0); }

// Precision/recall per distinct threshold, preceded by (0, precision of the
// first threshold).
inline std::vector<PrPoint> pr_curve(std::span<const double> scores, const std::vector<bool>& genuine) {
  const auto order = detail::order_by_score(scores, genuine);
  const auto pos = static_cast<std::size_t>(std::count(genuine.begin(), genuine.end(), true));
  if (pos == 0) throw data_error("precision/recall is undefined without genuine scores");

  std::vector<PrPoint> pr;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (genuine[order[i]] ? tp : fp)++;
    pr.push_back({static_cast<double>(tp) / static_cast<double>(pos), static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  pr.insert(pr.begin(), PrPoint{0.0, pr.front().precision});
  return pr;
}

// Trapezoidal area under precision over recall.
inline double aupr(std::span<const PrPoint> pr) {
  if (pr.size() < 2) throw data_error("PR curve needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < pr.size(); ++i)
    area += 0.5 * (pr[i].recall - pr[i - 1].recall) * (pr[i].precision + pr[i - 1].precision);
  return std::clamp(area, 0.0, 1.0);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single value.
inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) throw data_error("mean of an empty list");
  MeanStd m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

} // namespace spv
