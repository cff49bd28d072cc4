#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flashdet/inference.hpp"
#include "flashdet/tensor.hpp"

namespace flashdet {

// Pixel tallies against a ground-truth mask; tumor is the positive class.
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
};

ConfusionCounts confusion(const Mask& pred, const Mask& gt);

// Each metric returns 0 and sets *degenerate when its denominator is zero.
double sensitivity(const ConfusionCounts& c, bool* degenerate = nullptr);
double precision(const ConfusionCounts& c, bool* degenerate = nullptr);
double f1_score(const ConfusionCounts& c, bool* degenerate = nullptr);
double specificity(const ConfusionCounts& c, bool* degenerate = nullptr);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// Points ordered by descending threshold, starting at (0,0) and ending at
// (1,1); the matching thresholds for the anchors are +inf/-inf.
struct RocCurve {
  std::vector<RocPoint> points;
  std::vector<double> thresholds;
};

// 101 evenly spaced thresholds, 1.00 down to 0.00.
std::vector<double> default_roc_thresholds();

// Classifies tumor where prob >= threshold. gt values are 0/1 and must
// contain both classes.
RocCurve roc_curve(std::span<const float> probs, std::span<const std::uint8_t> gt,
                   const std::vector<double>& thresholds = default_roc_thresholds());
RocCurve roc_curve(const Tensor3& prob_map, const Mask& gt,
                   const std::vector<double>& thresholds = default_roc_thresholds());

// Trapezoidal area under the curve.
double auc_trapezoid(const RocCurve& curve);

// Degenerate-metric flags, OR-ed into CoreMetrics::degenerate_flags.
enum : unsigned {
  kDegenerateSensitivity = 1u,
  kDegeneratePrecision = 2u,
  kDegenerateF1 = 4u,
  kDegenerateSpecificity = 8u,
};

struct CoreMetrics {
  double sensitivity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
  double auc = 0.0;
  unsigned degenerate_flags = 0;
};

CoreMetrics evaluate_core(const Mask& pred, const Tensor3& prob_map, const Mask& gt);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1) standard deviation; 0 for n < 2
};

MeanStd mean_std(std::span<const double> values);

void write_metrics_csv(const std::vector<std::pair<std::string, CoreMetrics>>& rows,
                       const std::string& path);
void write_roc_csv(const RocCurve& curve, const std::string& path);

}  // namespace flashdet
