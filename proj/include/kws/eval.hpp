#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kws/cenet.hpp"
#include "kws/frontend.hpp"

namespace kws {

/// Fraction of rows of a row-major (B, n_classes) logit array whose argmax
/// equals the label. Ties resolve to the lowest class index.
double accuracy(std::span<const float> logits, int n_classes, std::span<const int> labels);
double accuracy(std::span<const double> logits, int n_classes, std::span<const int> labels);

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

struct RocCurve {
  std::string keyword;
  std::vector<RocPoint> points;  // increasing threshold
  double auc = 0.0;
};

inline constexpr int kDefaultThresholds = 101;

/// n evenly spaced thresholds from 0 to 1 inclusive.
std::vector<double> threshold_grid(int n);

/// FAR = non-targets with score >= τ over non-targets; FRR = targets with
/// score < τ over targets. Throws std::invalid_argument without at least one
/// target and one non-target.
RocCurve roc_for_keyword(std::span<const double> scores, std::span<const bool> is_target,
                         int n_thresholds = kDefaultThresholds, const std::string& keyword = "");

/// Trapezoid area under the (FAR, FRR) polyline.
double roc_auc(const std::vector<RocPoint>& points);

/// FRR of `curve` at false-alarm rate `far`, by linear interpolation along
/// FAR. Where several points share a FAR the lowest FRR is used; outside the
/// covered FAR range the nearest end value is held.
double interpolate_frr(const RocCurve& curve, double far);

/// Averages FRR across curves at the FAR grid far_i = 1 − τ_i. Point i of the
/// result carries threshold τ_i of the shared grid.
RocCurve vertical_average(std::span<const RocCurve> curves, const std::string& keyword = "overall");

/// One curve per keyword class (0..9), scoring each sample by its softmax
/// probability for that keyword. `probs` is row-major (S, n_classes).
std::vector<RocCurve> keyword_rocs(std::span<const double> probs, int n_classes, std::span<const int> labels,
                                   int n_thresholds = kDefaultThresholds);

void write_roc_csv(std::ostream& out, const RocCurve& curve);

struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Channel mean of the first item of a (B,C,H,W) activation.
FeatureGrid channel_mean(const Tensor<float>& activation);

enum class GcnSide { pre, post };
GcnSide parse_gcn_side(const std::string& name);

/// Infer-mode forward of one clip; returns the channel-mean map of stage
/// `stage` (1-based) before or after its GCN module. Asking for the post side
/// of a stage without a module throws std::invalid_argument.
FeatureGrid export_stage_feature_map(CENet<float>& model, const AudioClip& clip, const Frontend& frontend,
                                     int stage, GcnSide side);

void write_grid_csv(std::ostream& out, const FeatureGrid& grid);

}  // namespace kws
