#include "kws/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <ostream>
#include <stdexcept>

#include "kws/dataset.hpp"

namespace kws {

namespace {

template <typename T>
double accuracy_impl(std::span<const T> logits, int n_classes, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy of an empty batch");
  if (n_classes <= 0 || logits.size() != labels.size() * static_cast<std::size_t>(n_classes)) {
    throw std::invalid_argument("accuracy: logits do not match batch size × classes");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.subspan(i * n_classes, n_classes);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

double accuracy(std::span<const float> logits, int n_classes, std::span<const int> labels) {
  return accuracy_impl(logits, n_classes, labels);
}

double accuracy(std::span<const double> logits, int n_classes, std::span<const int> labels) {
  return accuracy_impl(logits, n_classes, labels);
}

std::vector<double> threshold_grid(int n) {
  if (n < 2) throw std::invalid_argument("threshold grid needs at least 2 points");
  std::vector<double> grid(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) grid[i] = static_cast<double>(i) / (n - 1);
  return grid;
}

double roc_auc(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    area += std::abs(points[i].far - points[i + 1].far) * (points[i].frr + points[i + 1].frr) / 2.0;
  }
  return area;
}

RocCurve roc_for_keyword(std::span<const double> scores, std::span<const bool> is_target, int n_thresholds,
                         const std::string& keyword) {
  if (scores.size() != is_target.size()) throw std::invalid_argument("roc: scores and targets differ in length");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (is_target[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) {
    throw std::invalid_argument("roc for '" + keyword + "' needs at least one target and one non-target sample");
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  RocCurve curve;
  curve.keyword = keyword;
  for (double tau : threshold_grid(n_thresholds)) {
    const auto accepted = neg.end() - std::lower_bound(neg.begin(), neg.end(), tau);
    const auto rejected = std::lower_bound(pos.begin(), pos.end(), tau) - pos.begin();
    curve.points.push_back({tau, static_cast<double>(accepted) / static_cast<double>(neg.size()),
                            static_cast<double>(rejected) / static_cast<double>(pos.size())});
  }
  curve.auc = roc_auc(curve.points);
  return curve;
}

double interpolate_frr(const RocCurve& curve, double far) {
  if (curve.points.empty()) throw std::invalid_argument("interpolate_frr on an empty curve");
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : curve.points) pts.emplace_back(p.far, p.frr);
  std::sort(pts.begin(), pts.end());
  // Lowest FRR at each distinct FAR.
  std::vector<std::pair<double, double>> env;
  for (const auto& p : pts) {
    if (env.empty() || env.back().first != p.first) env.push_back(p);
  }
  if (far <= env.front().first) return env.front().second;
  if (far >= env.back().first) return env.back().second;
  auto hi = std::upper_bound(env.begin(), env.end(), far,
                             [](double x, const std::pair<double, double>& p) { return x < p.first; });
  auto lo = hi - 1;
  if (lo->first == far) return lo->second;
  const double t = (far - lo->first) / (hi->first - lo->first);
  return lo->second + t * (hi->second - lo->second);
}

RocCurve vertical_average(std::span<const RocCurve> curves, const std::string& keyword) {
  if (curves.empty()) throw std::invalid_argument("vertical_average of no curves");
  const auto& ref = curves.front().points;
  for (const auto& c : curves) {
    if (c.points.size() != ref.size()) throw std::invalid_argument("vertical_average: threshold grids differ");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (c.points[i].threshold != ref[i].threshold) {
        throw std::invalid_argument("vertical_average: threshold grids differ");
      }
    }
  }
  RocCurve out;
  out.keyword = keyword;
  for (const auto& p : ref) {
    const double far = 1.0 - p.threshold;
    double total = 0.0;
    for (const auto& c : curves) total += interpolate_frr(c, far);
    out.points.push_back({p.threshold, far, total / static_cast<double>(curves.size())});
  }
  out.auc = roc_auc(out.points);
  return out;
}

std::vector<RocCurve> keyword_rocs(std::span<const double> probs, int n_classes, std::span<const int> labels,
                                   int n_thresholds) {
  if (n_classes < kNumKeywords || probs.size() != labels.size() * static_cast<std::size_t>(n_classes)) {
    throw std::invalid_argument("keyword_rocs: probabilities do not match samples × classes");
  }
  std::vector<RocCurve> curves;
  std::vector<double> scores(labels.size());
  std::unique_ptr<bool[]> target(new bool[labels.size()]);
  for (int k = 0; k < kNumKeywords; ++k) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs[i * n_classes + k];
      target[i] = labels[i] == k;
    }
    curves.push_back(roc_for_keyword(scores, std::span<const bool>(target.get(), labels.size()), n_thresholds,
                                     label_name(k)));
  }
  return curves;
}

void write_roc_csv(std::ostream& out, const RocCurve& curve) {
  out << "threshold,far,frr\n" << std::setprecision(10);
  for (const auto& p : curve.points) out << p.threshold << ',' << p.far << ',' << p.frr << '\n';
}

FeatureGrid channel_mean(const Tensor<float>& activation) {
  if (activation.rank() != 4) throw std::invalid_argument("channel_mean expects (B,C,H,W)");
  const auto c = activation.dim(1), h = activation.dim(2), w = activation.dim(3);
  FeatureGrid grid;
  grid.rows = static_cast<int>(h);
  grid.cols = static_cast<int>(w);
  grid.values.assign(static_cast<std::size_t>(h * w), 0.0);
  const auto data = activation.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t i = 0; i < h * w; ++i) grid.values[i] += data[ch * h * w + i];
  }
  for (auto& v : grid.values) v /= static_cast<double>(c);
  return grid;
}

GcnSide parse_gcn_side(const std::string& name) {
  if (name == "pre") return GcnSide::pre;
  if (name == "post") return GcnSide::post;
  throw std::invalid_argument("expected pre|post, got '" + name + "'");
}

FeatureGrid export_stage_feature_map(CENet<float>& model, const AudioClip& clip, const Frontend& frontend,
                                     int stage, GcnSide side) {
  if (stage < 1 || stage > ModelConfig::kStages) throw std::out_of_range("stage must be 1, 2 or 3");
  if (side == GcnSide::post && !model.stage(stage).gcn) {
    throw std::invalid_argument("stage " + std::to_string(stage) + " has no GCN module");
  }
  NoGradGuard no_grad;
  const auto feats = frontend.compute(clip);
  ForwardTrace<float> trace;
  model.forward(features_to_tensor({&feats}), Mode::infer, &trace);
  const auto idx = static_cast<std::size_t>(stage - 1);
  return channel_mean(side == GcnSide::pre ? trace.pre_gcn[idx] : trace.post_gcn[idx]);
}

void write_grid_csv(std::ostream& out, const FeatureGrid& grid) {
  out << std::setprecision(9);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (c) out << ',';
      out << grid.at(r, c);
    }
    out << '\n';
  }
}

}  // namespace kws
