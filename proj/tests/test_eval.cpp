#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "kws/eval.hpp"
#include "support.hpp"

using namespace kws;

namespace {

void check_monotone(const RocCurve& c) {
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    REQUIRE(c.points[i].threshold > c.points[i - 1].threshold);
    REQUIRE(c.points[i].far <= c.points[i - 1].far);
    REQUIRE(c.points[i].frr >= c.points[i - 1].frr);
  }
  for (const auto& p : c.points) {
    REQUIRE(p.far >= 0.0);
    REQUIRE(p.far <= 1.0);
    REQUIRE(p.frr >= 0.0);
    REQUIRE(p.frr <= 1.0);
  }
}

RocCurve random_curve(std::mt19937_64& rng, int n, double shift) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(n);
  std::unique_ptr<bool[]> t(new bool[n]);
  for (int i = 0; i < n; ++i) {
    t[i] = i % 3 == 0;
    s[i] = std::clamp(u(rng) + (t[i] ? shift : 0.0), 0.0, 1.0);
  }
  return roc_for_keyword(s, std::span<const bool>(t.get(), n));
}

}  // namespace

TEST_CASE("accuracy against a direct count") {
  const std::vector<float> onehot{1, 0, 0, 0, 1, 0};
  const std::vector<int> right{0, 1}, wrong{2, 0};
  CHECK(accuracy(onehot, 3, right) == 1.0);
  CHECK(accuracy(onehot, 3, wrong) == 0.0);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  std::vector<float> logits(200 * 12);
  std::vector<int> labels(200);
  for (auto& v : logits) v = n(rng);
  for (auto& l : labels) l = static_cast<int>(rng() % 12);
  int hits = 0;
  for (int i = 0; i < 200; ++i) {
    int best = 0;
    for (int k = 1; k < 12; ++k) {
      if (logits[i * 12 + k] > logits[i * 12 + best]) best = k;
    }
    hits += best == labels[i];
  }
  CHECK(accuracy(logits, 12, labels) == hits / 200.0);
  CHECK_THROWS(accuracy(std::vector<float>{}, 12, std::vector<int>{}));
}

TEST_CASE("roc equals the brute-force double loop") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int S = 2 + static_cast<int>(rng() % 999);
    const int T = 2 + static_cast<int>(rng() % 100);
    std::vector<double> s(S);
    std::vector<bool> target(S);
    std::unique_ptr<bool[]> t(new bool[S]);
    for (int i = 0; i < S; ++i) {
      // Quantized scores so ties with the grid occur.
      s[i] = (rng() % 3 == 0) ? static_cast<double>(rng() % T) / (T - 1) : std::uniform_real_distribution<>(0, 1)(rng);
      target[i] = t[i] = (i == 0) || (i != 1 && rng() % 4 == 0);
    }
    const auto c = roc_for_keyword(s, std::span<const bool>(t.get(), S), T);
    const auto ref = test::brute_force_roc(s, target, T);
    REQUIRE(c.points.size() == static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) {
      REQUIRE(c.points[k].far == ref.far[k]);
      REQUIRE(c.points[k].frr == ref.frr[k]);
    }
    check_monotone(c);
  }
}

TEST_CASE("roc boundaries and separable scores") {
  const std::vector<double> s{0.9, 0.8, 0.1, 0.2};
  const bool t[] = {true, true, false, false};
  const auto c = roc_for_keyword(s, t);
  CHECK(c.points.front().far == 1.0);
  CHECK(c.points.front().frr == 0.0);
  bool perfect = false;
  for (const auto& p : c.points) perfect |= p.far == 0.0 && p.frr == 0.0;
  CHECK(perfect);
  CHECK(c.auc == doctest::Approx(0.0));
  const bool all[] = {true, true, true, true};
  CHECK_THROWS_AS(roc_for_keyword(s, all), std::invalid_argument);
}

TEST_CASE("vertical averaging") {
  std::mt19937_64 rng(3);
  const auto a = random_curve(rng, 300, 0.3);
  const auto b = random_curve(rng, 300, 0.1);
  // Identical curves give back the same curve.
  const auto once = vertical_average(std::vector<RocCurve>{a});
  const auto twice = vertical_average(std::vector<RocCurve>{a, a});
  for (std::size_t i = 0; i < once.points.size(); ++i) CHECK(once.points[i].frr == twice.points[i].frr);
  const auto again = vertical_average(std::vector<RocCurve>{once});
  for (std::size_t i = 0; i < once.points.size(); ++i) CHECK(again.points[i].frr == once.points[i].frr);
  // Pointwise mean of the interpolated FRRs.
  const auto ab = vertical_average(std::vector<RocCurve>{a, b});
  for (const auto& p : ab.points) {
    CHECK(p.far == doctest::Approx(1.0 - p.threshold));
    CHECK(p.frr == doctest::Approx((interpolate_frr(a, p.far) + interpolate_frr(b, p.far)) / 2));
  }
  check_monotone(ab);
  CHECK_THROWS(vertical_average(std::vector<RocCurve>{}));
}

TEST_CASE("interpolation along FAR") {
  RocCurve c;
  c.points = {{0.0, 1.0, 0.0}, {0.5, 0.5, 0.2}, {0.75, 0.5, 0.4}, {1.0, 0.0, 1.0}};
  CHECK(interpolate_frr(c, 0.5) == 0.2);   // lowest FRR at a repeated FAR
  CHECK(interpolate_frr(c, 0.25) == doctest::Approx(0.6));
  CHECK(interpolate_frr(c, 0.75) == doctest::Approx(0.1));
  CHECK(interpolate_frr(c, 1.0) == 0.0);
}

TEST_CASE("ten keyword curves average to the per-point mean") {
  std::mt19937_64 rng(4);
  const int S = 500;
  std::vector<double> probs(S * 12);
  std::vector<int> labels(S);
  std::gamma_distribution<double> g(1.0, 1.0);
  for (int i = 0; i < S; ++i) {
    labels[i] = static_cast<int>(rng() % 12);
    double z = 0;
    for (int k = 0; k < 12; ++k) z += probs[i * 12 + k] = g(rng) + (k == labels[i] ? 2.0 : 0.0);
    for (int k = 0; k < 12; ++k) probs[i * 12 + k] /= z;
  }
  const auto curves = keyword_rocs(probs, 12, labels);
  REQUIRE(curves.size() == 10);
  CHECK(curves[0].keyword == "yes");
  const auto avg = vertical_average(curves);
  for (const auto& p : avg.points) {
    double mean = 0;
    for (const auto& c : curves) mean += interpolate_frr(c, p.far);
    CHECK(p.frr == doctest::Approx(mean / 10));
  }
  std::ostringstream csv;
  write_roc_csv(csv, avg);
  CHECK(csv.str().rfind("threshold,far,frr\n0,", 0) == 0);
}

TEST_CASE("channel mean and stage export") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n;
  std::vector<float> v(2 * 3 * 4 * 5);
  for (auto& x : v) x = n(rng);
  const auto grid = channel_mean(Tensor<float>::from({2, 3, 4, 5}, v));
  CHECK(grid.rows == 4);
  CHECK(grid.cols == 5);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c) {
      double s = 0;
      for (int ch = 0; ch < 3; ++ch) s += v[(ch * 4 + r) * 5 + c];
      CHECK(grid.at(r, c) == doctest::Approx(s / 3));
    }

  auto model = CENet<float>::build(ModelConfig::for_variant(Variant::cenet6, {1}), 6);
  Frontend fe;
  const auto clip = test::word_clip(2, 6);
  const auto pre = export_stage_feature_map(model, clip, fe, 1, GcnSide::pre);
  const auto post = export_stage_feature_map(model, clip, fe, 1, GcnSide::post);
  CHECK(pre.rows == 25);
  CHECK(pre.cols == 10);
  CHECK(pre.values == post.values);
  CHECK_THROWS_AS(export_stage_feature_map(model, clip, fe, 2, GcnSide::post), std::invalid_argument);
  CHECK(export_stage_feature_map(model, clip, fe, 3, GcnSide::pre).rows == 7);
  std::ostringstream csv;
  write_grid_csv(csv, pre);
  const auto text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 25);
}
