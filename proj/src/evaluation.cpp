#include "flashdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace flashdet {

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("confusion: mask dimensions differ (" +
                                std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                                " vs " + std::to_string(gt.height) + "x" +
                                std::to_string(gt.width) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, bool* degenerate) {
  if (den == 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double sensitivity(const ConfusionCounts& c, bool* degenerate) {
  return ratio(c.tp, c.tp + c.fn, degenerate);
}

double precision(const ConfusionCounts& c, bool* degenerate) {
  return ratio(c.tp, c.tp + c.fp, degenerate);
}

double f1_score(const ConfusionCounts& c, bool* degenerate) {
  const double sens = sensitivity(c);
  const double prec = precision(c);
  if (sens + prec == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return 2.0 * sens * prec / (sens + prec);
}

double specificity(const ConfusionCounts& c, bool* degenerate) {
  return ratio(c.tn, c.tn + c.fp, degenerate);
}

std::vector<double> default_roc_thresholds() {
  std::vector<double> t(101);
  for (int i = 0; i <= 100; ++i) t[static_cast<std::size_t>(i)] = (100 - i) / 100.0;
  return t;
}

RocCurve roc_curve(std::span<const float> probs, std::span<const std::uint8_t> gt,
                   const std::vector<double>& thresholds) {
  if (probs.size() != gt.size())
    throw std::invalid_argument("roc_curve: probs and ground truth differ in length");
  if (probs.empty()) throw std::invalid_argument("roc_curve: empty input");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] > thresholds[i - 1])
      throw std::invalid_argument("roc_curve: thresholds must be descending");

  // Sorted per-class score lists make each threshold a pair of binary
  // searches instead of a full pass.
  std::vector<float> pos, neg;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] < 0.0f || probs[i] > 1.0f)
      throw std::invalid_argument("roc_curve: probabilities must be in [0, 1]");
    (gt[i] != 0 ? pos : neg).push_back(probs[i]);
  }
  if (pos.empty() || neg.empty())
    throw std::invalid_argument("roc_curve: ground truth has a single class");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());

  RocCurve curve;
  curve.points.reserve(thresholds.size() + 2);
  curve.thresholds.reserve(thresholds.size() + 2);
  curve.points.push_back({0.0, 0.0});
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  for (const double t : thresholds) {
    const auto tp = pos.end() - std::lower_bound(pos.begin(), pos.end(), static_cast<float>(t));
    const auto fp = neg.end() - std::lower_bound(neg.begin(), neg.end(), static_cast<float>(t));
    curve.points.push_back({static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
    curve.thresholds.push_back(t);
  }
  curve.points.push_back({1.0, 1.0});
  curve.thresholds.push_back(-std::numeric_limits<double>::infinity());
  return curve;
}

RocCurve roc_curve(const Tensor3& prob_map, const Mask& gt,
                   const std::vector<double>& thresholds) {
  if (prob_map.channels != 1)
    throw std::invalid_argument("roc_curve: probability map must be single-channel");
  if (prob_map.height != gt.height || prob_map.width != gt.width)
    throw std::invalid_argument("roc_curve: map and ground truth dimensions differ");
  return roc_curve(std::span<const float>(prob_map.data),
                   std::span<const std::uint8_t>(gt.data), thresholds);
}

double auc_trapezoid(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return area;
}

CoreMetrics evaluate_core(const Mask& pred, const Tensor3& prob_map, const Mask& gt) {
  CoreMetrics m;
  const ConfusionCounts c = confusion(pred, gt);
  bool deg = false;
  m.sensitivity = sensitivity(c, &deg);
  if (deg) m.degenerate_flags |= kDegenerateSensitivity;
  m.precision = precision(c, &deg);
  if (deg) m.degenerate_flags |= kDegeneratePrecision;
  m.f1 = f1_score(c, &deg);
  if (deg) m.degenerate_flags |= kDegenerateF1;
  m.specificity = specificity(c, &deg);
  if (deg) m.degenerate_flags |= kDegenerateSpecificity;
  m.auc = auc_trapezoid(roc_curve(prob_map, gt));
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  double sum = 0.0;
  for (const double v : values) sum += v;
  r.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return r;
  double sq = 0.0;
  for (const double v : values) sq += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  return r;
}

void write_metrics_csv(const std::vector<std::pair<std::string, CoreMetrics>>& rows,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  f << "core_id,sensitivity,precision,f1,specificity,auc,degenerate_flags\n";
  for (const auto& [id, m] : rows)
    f << id << ',' << m.sensitivity << ',' << m.precision << ',' << m.f1 << ','
      << m.specificity << ',' << m.auc << ',' << m.degenerate_flags << '\n';
}

void write_roc_csv(const RocCurve& curve, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_roc_csv: cannot open " + path);
  f << "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < curve.points.size(); ++i)
    f << curve.thresholds[i] << ',' << curve.points[i].fpr << ',' << curve.points[i].tpr
      << '\n';
}

}  // namespace flashdet
