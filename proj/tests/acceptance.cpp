// Acceptance runner: one PASS/FAIL line per criterion, sub-checks indented below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kws/cenet.hpp"
#include "kws/dataset.hpp"
#include "kws/eval.hpp"
#include "kws/footprint.hpp"
#include "kws/frontend.hpp"
#include "kws/gcn.hpp"
#include "kws/ops.hpp"
#include "kws/trainer.hpp"
#include "support.hpp"

using namespace kws;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
  std::string name;
  std::vector<std::pair<bool, std::string>> checks;

  void check(bool ok, const std::string& what) { checks.emplace_back(ok, what); }
  bool passed() const {
    for (const auto& c : checks)
      if (!c.first) return false;
    return !checks.empty();
  }
};

int g_failed = 0;

void report(const Criterion& c) {
  const bool ok = c.passed();
  if (!ok) ++g_failed;
  std::cout << (ok ? "PASS " : "FAIL ") << c.name << '\n';
  for (const auto& [pass, what] : c.checks) std::cout << "    " << (pass ? "ok   " : "FAIL ") << what << '\n';
  std::cout << std::flush;
}

template <typename F>
void guarded(Criterion& c, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    c.check(false, std::string("exception: ") + e.what());
  }
}

std::string pct(double got, double want) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * (got - want) / want);
  return buf;
}

bool within(double got, double want, double tol) { return std::abs(got - want) <= tol * want; }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ------------------------------------------------------------------ footprint

void footprint() {
  Criterion c{"footprint: parameter and multiply counts against the reference counts"};
  guarded(c, [&] {
    const Variant vs[] = {Variant::cenet6, Variant::cenet24, Variant::cenet40};
    const double base_params[] = {16.2e3, 44.3e3, 61e3};
    const double gcn_params[] = {27.6e3, 55.6e3, 72.3e3};
    const double base_macs[] = {1.95e6, 8.51e6, 16.18e6};
    const double gcn_macs[] = {2.55e6, 9.11e6, 16.78e6};
    for (int i = 0; i < 3; ++i) {
      const auto name = to_string(vs[i]);
      const auto base = analyze_footprint(ModelConfig::for_variant(vs[i]));
      const auto full = analyze_footprint(ModelConfig::for_variant(vs[i], {1, 2, 3}));
      c.check(within(double(base.weight_params), base_params[i], 0.08),
              name + " params " + std::to_string(base.weight_params) + " vs " + std::to_string(int(base_params[i])) +
                  " (" + pct(double(base.weight_params), base_params[i]) + ", tol 8%)");
      c.check(within(double(full.weight_params), gcn_params[i], 0.08),
              name + "+gcn params " + std::to_string(full.weight_params) + " vs " + std::to_string(int(gcn_params[i])) +
                  " (" + pct(double(full.weight_params), gcn_params[i]) + ", tol 8%)");
      c.check(within(double(base.macs), base_macs[i], 0.15),
              name + " macs " + std::to_string(base.macs) + " vs " + std::to_string(int(base_macs[i])) + " (" +
                  pct(double(base.macs), base_macs[i]) + ", tol 15%)");
      const double delta = double(full.macs - base.macs), want = gcn_macs[i] - base_macs[i];
      c.check(within(delta, want, 0.25), name + " gcn macs delta " + std::to_string(full.macs - base.macs) + " vs " +
                                             std::to_string(int(want)) + " (" + pct(delta, want) + ", tol 25%)");
      // 1.5c² + 1 per site at r = 4.
      const std::int64_t expect = 3 * 32 * 32 / 2 + 1 + 3 * 48 * 48 / 2 + 1 + 3 * 64 * 64 / 2 + 1;
      c.check(full.weight_params - base.weight_params == expect,
              name + " gcn param delta " + std::to_string(full.weight_params - base.weight_params) + " == " +
                  std::to_string(expect));
    }
    const double stage_params[] = {17.8e3, 19.8e3, 22.5e3};
    for (int s = 1; s <= 3; ++s) {
      const auto r = analyze_footprint(ModelConfig::for_variant(Variant::cenet6, {s}));
      c.check(within(double(r.weight_params), stage_params[s - 1], 0.08),
              "cenet6+gcn stage " + std::to_string(s) + " params " + std::to_string(r.weight_params) + " vs " +
                  std::to_string(int(stage_params[s - 1])) + " (" + pct(double(r.weight_params), stage_params[s - 1]) +
                  ", tol 8%)");
    }
  });
  report(c);
}

// ------------------------------------------------------------------- frontend

void frontend() {
  Criterion c{"front-end: one-second clip gives 101x40 for mfcc and fbank"};
  guarded(c, [&] {
    for (auto kind : {FeatureKind::mfcc, FeatureKind::fbank}) {
      FrontendConfig cfg;
      cfg.kind = kind;
      const auto m = Frontend(cfg).compute(test::word_clip(3, 1));
      c.check(m.frames == 101 && m.coeffs == 40 && m.values.size() == 101 * 40,
              to_string(kind) + " " + std::to_string(m.frames) + "x" + std::to_string(m.coeffs));
    }
  });
  report(c);
}

// --------------------------------------------------------------- numeric core

Tensor<double> weighted(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 r(seed);
  return ops::sum(ops::mul(y, test::random_tensor(r, y.shape(), false)));
}

using LossFn = std::function<Tensor<double>(std::vector<Tensor<double>>&)>;

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor<double>>(std::mt19937_64&)> inputs;
  std::function<Tensor<double>(std::vector<Tensor<double>>&)> op;
};

void numeric_core() {
  Criterion c{"numeric core: gradient checks and brute-force oracles, 100 cases each, under a minute"};
  const auto t0 = Clock::now();
  guarded(c, [&] {
    constexpr int kCases = 100;
    auto rt = [](std::mt19937_64& r, Shape s) { return test::random_tensor(r, std::move(s)); };
    const std::vector<int> labels{0, 4, 2};
    const std::vector<OpCase> cases{
        {"conv2d", [&](auto& r) { return std::vector{rt(r, {2, 2, 5, 4}), rt(r, {3, 2, 3, 3})}; },
         [](auto& v) { return ops::conv2d(v[0], v[1], 1 + int(v[0].data()[0] > 0), 1); }},
        {"avg_pool2d", [&](auto& r) { return std::vector{rt(r, {2, 2, 5, 5})}; },
         [](auto& v) { return ops::avg_pool2d(v[0], 2, 2); }},
        {"batch_norm2d", [&](auto& r) { return std::vector{rt(r, {3, 2, 3, 2}), rt(r, {2}), rt(r, {2})}; },
         [](auto& v) {
           auto stats = ops::BatchNormStats<double>::fresh(2);
           return ops::batch_norm2d(v[0], v[1], v[2], stats, Mode::train);
         }},
        {"relu", [](auto& r) { return std::vector{test::random_tensor_away_from_zero(r, {4, 5})}; },
         [](auto& v) { return ops::relu(v[0]); }},
        {"add", [&](auto& r) { return std::vector{rt(r, {3, 4}), rt(r, {3, 4})}; },
         [](auto& v) { return ops::add(v[0], v[1]); }},
        {"mul", [&](auto& r) { return std::vector{rt(r, {3, 4}), rt(r, {3, 4})}; },
         [](auto& v) { return ops::mul(v[0], v[1]); }},
        {"scale", [&](auto& r) { return std::vector{rt(r, {3, 4}), rt(r, {1})}; },
         [](auto& v) { return ops::scale(v[0], v[1]); }},
        {"linear", [&](auto& r) { return std::vector{rt(r, {2, 3, 4}), rt(r, {5, 4}), rt(r, {5})}; },
         [](auto& v) { return ops::linear(v[0], v[1], v[2]); }},
        {"matmul", [&](auto& r) { return std::vector{rt(r, {2, 3, 4}), rt(r, {2, 4, 3})}; },
         [](auto& v) { return ops::matmul(v[0], v[1]); }},
        {"transpose", [&](auto& r) { return std::vector{rt(r, {2, 3, 4})}; },
         [](auto& v) { return ops::transpose(v[0]); }},
        {"reshape", [&](auto& r) { return std::vector{rt(r, {2, 6})}; },
         [](auto& v) { return ops::reshape(v[0], {3, 4}); }},
        {"softmax", [&](auto& r) { return std::vector{rt(r, {2, 3, 5})}; },
         [](auto& v) { return ops::softmax(v[0], -1); }},
        {"global_avg_pool", [&](auto& r) { return std::vector{rt(r, {2, 3, 3, 2})}; },
         [](auto& v) { return ops::global_avg_pool(v[0]); }},
        {"cross_entropy", [&](auto& r) { return std::vector{rt(r, {3, 5})}; },
         [labels](auto& v) { return ops::cross_entropy(v[0], labels); }},
        {"gcn", [&](auto& r) { return std::vector{rt(r, {1, 8, 2, 3}), rt(r, {2, 8}), rt(r, {2, 8}), rt(r, {8, 8})}; },
         [](auto& v) {
           auto m = NonLocalGcn<double>::from_weights(v[1], v[2], v[3], 0.5);
           return m.forward(v[0]);
         }},
    };
    std::mt19937_64 rng(20240601);
    for (const auto& oc : cases) {
      double worst = 0;
      int n = 0;
      for (int k = 0; k < kCases; ++k) {
        auto in = oc.inputs(rng);
        const auto seed = rng();
        const bool is_loss = oc.name == "cross_entropy";
        LossFn f = [&](auto& v) { return is_loss ? oc.op(v) : weighted(oc.op(v), seed); };
        const auto r = test::grad_check(in, f);
        worst = std::max(worst, r.max_rel_error);
        n += r.checked > 0;
      }
      std::ostringstream s;
      s << "gradcheck " << oc.name << ": " << n << " cases, max rel err " << worst;
      c.check(n >= kCases && worst < 1e-4, s.str());
    }

    double conv_err = 0, pool_err = 0, nl_err = 0;
    for (int k = 0; k < kCases; ++k) {
      const int stride = 1 + int(rng() % 2), pad = int(rng() % 2), ks = rng() % 3 == 0 ? 1 : 3;
      auto x = test::random_tensor(rng, {1 + int(rng() % 2), 1 + int(rng() % 4), 4 + int(rng() % 8), 4 + int(rng() % 8)}, false);
      auto w = test::random_tensor(rng, {1 + int(rng() % 5), x.dim(1), ks, ks}, false);
      Shape os;
      const auto ref = test::naive_conv2d({x.data().begin(), x.data().end()}, x.shape(),
                                          {w.data().begin(), w.data().end()}, w.shape(), stride, pad, os);
      const auto y = ops::conv2d(x, w, stride, pad);
      if (y.shape() != os) conv_err = INFINITY;
      for (std::size_t i = 0; i < ref.size() && y.shape() == os; ++i)
        conv_err = std::max(conv_err, std::abs(y.data()[i] - ref[i]));

      auto p = test::random_tensor(rng, {1 + int(rng() % 2), 1 + int(rng() % 3), 2 + int(rng() % 30), 2 + int(rng() % 20)}, false);
      const auto pref = test::naive_avg_pool({p.data().begin(), p.data().end()}, p.shape(), 2, 2, os);
      const auto py = ops::avg_pool2d(p, 2, 2);
      if (py.shape() != os) pool_err = INFINITY;
      for (std::size_t i = 0; i < pref.size() && py.shape() == os; ++i)
        pool_err = std::max(pool_err, std::abs(py.data()[i] - pref[i]));

      const int N = 1 + int(rng() % 64), ch = 4 * (1 + int(rng() % 3)), e = ch / 4;
      auto m = NonLocalGcn<double>::from_weights(test::random_tensor(rng, {e, ch}, false, 0.5),
                                                 test::random_tensor(rng, {e, ch}, false, 0.5),
                                                 test::random_tensor(rng, {ch, ch}, false, 0.5), 0.0);
      auto nodes = test::random_tensor(rng, {N, ch}, false);
      auto vec = [](const Tensor<double>& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
      const auto nref = test::naive_non_local(vec(nodes), N, ch, vec(m.w_theta()), vec(m.w_phi()), vec(m.w()), e);
      const auto msg = m.message_pass(nodes, m.affinity(nodes));
      for (std::size_t i = 0; i < nref.messages.size(); ++i)
        nl_err = std::max(nl_err, std::abs(msg.data()[i] - nref.messages[i]));
    }
    std::ostringstream s1, s2, s3;
    s1 << "conv2d oracle: " << kCases << " cases, max abs err " << conv_err;
    s2 << "avg_pool2d oracle: " << kCases << " cases, max abs err " << pool_err;
    s3 << "non-local oracle: " << kCases << " cases, max abs err " << nl_err;
    c.check(conv_err < 1e-10, s1.str());
    c.check(pool_err < 1e-12, s2.str());
    c.check(nl_err < 1e-10, s3.str());
  });
  const double secs = seconds_since(t0);
  c.check(secs < 60.0, "wall time " + std::to_string(secs) + " s");
  report(c);
}

// ------------------------------------------------------------------------ gcn

void gcn_properties() {
  Criterion c{"gcn: stochastic affinity, gamma-zero transparency, permutation equivariance, node/matrix agreement"};
  guarded(c, [&] {
    std::mt19937_64 rng(7);
    double row_err = 0, perm_err = 0, form_err = 0;
    for (int k = 0; k < 100; ++k) {
      const int N = 1 + int(rng() % 64), ch = 4 * (1 + int(rng() % 4)), e = ch / 4;
      auto m = NonLocalGcn<double>::from_weights(test::random_tensor(rng, {e, ch}, false, 0.5),
                                                 test::random_tensor(rng, {e, ch}, false, 0.5),
                                                 test::random_tensor(rng, {ch, ch}, false, 0.5), 0.8);
      auto x = test::random_tensor(rng, {N, ch}, false);
      const auto a = m.affinity(x);
      for (int i = 0; i < N; ++i) {
        double s = 0;
        for (int j = 0; j < N; ++j) s += a.data()[i * N + j];
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
      std::vector<int> perm(N);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> px(x.data().size());
      for (int i = 0; i < N; ++i)
        for (int d = 0; d < ch; ++d) px[i * ch + d] = x.data()[perm[i] * ch + d];
      auto xt = Tensor<double>::from({N, ch}, px);
      const auto out = m.augment(x, m.message_pass(x, a));
      const auto pout = m.augment(xt, m.message_pass(xt, m.affinity(xt)));
      for (int i = 0; i < N; ++i)
        for (int d = 0; d < ch; ++d)
          perm_err = std::max(perm_err, std::abs(pout.data()[i * ch + d] - out.data()[perm[i] * ch + d]));

      auto vec = [](const Tensor<double>& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
      const auto ref = test::naive_non_local(vec(x), N, ch, vec(m.w_theta()), vec(m.w_phi()), vec(m.w()), e);
      const auto msg = m.message_pass(x, a);
      for (std::size_t i = 0; i < ref.affinity.size(); ++i) form_err = std::max(form_err, std::abs(a.data()[i] - ref.affinity[i]));
      for (std::size_t i = 0; i < ref.messages.size(); ++i) form_err = std::max(form_err, std::abs(msg.data()[i] - ref.messages[i]));
    }
    std::ostringstream s1, s2, s3;
    s1 << "affinity row sums: 100 cases, max |sum-1| " << row_err;
    s2 << "permutation equivariance: 100 cases N<=64, max err " << perm_err;
    s3 << "per-node loop vs matrix form: 100 cases, max err " << form_err;
    c.check(row_err <= 1e-6, s1.str());
    c.check(perm_err <= 1e-5, s2.str());
    c.check(form_err <= 1e-5, s3.str());

    for (auto v : {Variant::cenet6, Variant::cenet24, Variant::cenet40}) {
      auto base = CENet<float>::build(ModelConfig::for_variant(v), 3);
      auto with = insert_gcn(base.clone(), {1, 2, 3}, 4);
      std::mt19937_64 r(11);
      std::normal_distribution<float> nd;
      std::vector<float> x(2 * 101 * 40);
      for (auto& z : x) z = nd(r);
      const auto in = Tensor<float>::from({2, 1, 101, 40}, x);
      NoGradGuard g;
      const auto a = base.forward(in, Mode::infer), b = with.forward(in, Mode::infer);
      const bool same = std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end());
      c.check(same, to_string(v) + " infer logits bit-identical after gamma=0 insertion");
    }
  });
  report(c);
}

// -------------------------------------------------------------------- trainer

InMemoryClips toy_clips(int n, std::uint64_t seed) {
  InMemoryClips clips;
  for (int i = 0; i < n; ++i) clips.add({test::word_clip(i % 12, seed + i), i % 12});
  return clips;
}

Tensor<float> batch_of(const ClipSource& src, const Frontend& fe, std::vector<int>& labels) {
  std::vector<FeatureMatrix> feats;
  labels.clear();
  for (std::size_t i = 0; i < src.size(); ++i) {
    feats.push_back(fe.compute(src.get(i).clip));
    labels.push_back(src.label(i));
  }
  std::vector<const FeatureMatrix*> ptrs;
  for (auto& f : feats) ptrs.push_back(&f);
  return features_to_tensor(ptrs);
}

void trainer() {
  Criterion c{"trainer: poly endpoints, initial loss, 32-sample overfit, bit-reproducible runs"};
  guarded(c, [&] {
    TrainConfig cfg;
    c.check(poly_lr(0, 1000, cfg) == 0.01, "poly_lr(0) == 0.01 exactly");
    c.check(poly_lr(1000, 1000, cfg) == 0.0, "poly_lr(max_iter) == 0 exactly");

    Frontend fe;
    std::vector<int> labels;
    for (auto v : {Variant::cenet6, Variant::cenet24, Variant::cenet40}) {
      auto clips = toy_clips(24, 5);
      auto model = CENet<float>::build(ModelConfig::for_variant(v), 5);
      const auto batch = batch_of(clips, fe, labels);
      NoGradGuard g;
      const double loss = ops::cross_entropy(model.forward(batch, Mode::train), labels).item();
      std::ostringstream s;
      s << to_string(v) << " initial loss " << loss << " vs ln 12 = " << std::log(12.0);
      c.check(std::abs(loss - std::log(12.0)) <= 0.1, s.str());
    }

    {
      const auto t0 = Clock::now();
      auto clips = toy_clips(32, 1000);
      auto model = CENet<float>::build(ModelConfig::for_variant(Variant::cenet6), 17);
      TrainConfig oc;
      oc.augment = false;
      oc.batch_size = 32;
      oc.epochs = 300;
      Trainer t(model, oc);
      const auto batch = batch_of(clips, fe, labels);
      int reached = -1;
      double infer_acc = 0;
      for (int step = 0; step < 300 && reached < 0; ++step) {
        t.train_step(batch, labels, poly_lr(step, 300, oc));
        if ((step + 1) % 10 == 0) {
          infer_acc = evaluate_accuracy(model, clips, fe, 32);
          if (infer_acc == 1.0) reached = step + 1;
        }
      }
      std::ostringstream s;
      s << "cenet6 32-sample overfit: " << (reached > 0 ? "100% at step " + std::to_string(reached)
                                                         : "accuracy " + std::to_string(infer_acc) + " after 300 steps")
        << " (" << seconds_since(t0) << " s)";
      c.check(reached > 0, s.str());
    }

    {
      auto noise = std::vector<AudioClip>{test::noise_clip(3, 0.2, 2 * kClipSamples)};
      TrainConfig rc;
      rc.epochs = 2;
      rc.batch_size = 8;
      rc.rng_seed = 42;
      auto run = [&] {
        auto clips = toy_clips(20, 300);
        auto model = CENet<float>::build(ModelConfig::for_variant(Variant::cenet6, {2}), rc.rng_seed);
        Trainer t(model, rc);
        auto result = t.fit(clips, nullptr, noise);
        return std::make_pair(result, model.state());
      };
      const auto [r1, s1] = run();
      const auto [r2, s2] = run();
      bool same = r1.steps.size() == r2.steps.size() && s1.size() == s2.size();
      for (std::size_t i = 0; same && i < r1.steps.size(); ++i) same = r1.steps[i].loss == r2.steps[i].loss;
      for (std::size_t i = 0; same && i < s1.size(); ++i) same = s1[i].name == s2[i].name && s1[i].values == s2[i].values;
      c.check(same, "two seeded runs with augmentation: identical losses and final state (" +
                        std::to_string(r1.steps.size()) + " steps)");
    }
  });
  report(c);
}

// ----------------------------------------------------------------------- eval

void eval() {
  Criterion c{"eval: roc equals the brute-force oracle, monotone FAR/FRR"};
  guarded(c, [&] {
    std::mt19937_64 rng(99);
    int mismatches = 0, violations = 0, sets = 0;
    for (int k = 0; k < 200; ++k) {
      const int S = 2 + int(rng() % 999), T = 2 + int(rng() % 200);
      std::vector<double> s(S);
      std::vector<bool> target(S);
      std::unique_ptr<bool[]> t(new bool[S]);
      for (int i = 0; i < S; ++i) {
        s[i] = rng() % 4 == 0 ? double(rng() % T) / (T - 1) : std::uniform_real_distribution<>(0, 1)(rng);
        target[i] = t[i] = i == 0 || (i != 1 && rng() % 5 == 0);
      }
      const auto curve = roc_for_keyword(s, std::span<const bool>(t.get(), S), T);
      const auto ref = test::brute_force_roc(s, target, T);
      ++sets;
      for (int j = 0; j < T; ++j) mismatches += curve.points[j].far != ref.far[j] || curve.points[j].frr != ref.frr[j];
      for (int j = 1; j < T; ++j)
        violations += curve.points[j].far > curve.points[j - 1].far || curve.points[j].frr < curve.points[j - 1].frr;
    }
    c.check(mismatches == 0, std::to_string(sets) + " score sets (S<=1000): " + std::to_string(mismatches) +
                                 " points differ from the oracle");
    c.check(violations == 0, "monotonicity violations: " + std::to_string(violations));
  });
  report(c);
}

// ---------------------------------------------------------------- full corpus

void smoke() {
  const char* dir = std::getenv("KWS_DATA_DIR");
  if (!dir || !*dir) {
    std::cout << "SKIP full-corpus smoke: 5 epochs of cenet6 reach >=70% validation accuracy (KWS_DATA_DIR unset)\n";
    return;
  }
  Criterion c{"full-corpus smoke: 5 epochs of cenet6 reach >=70% validation accuracy"};
  guarded(c, [&] {
    const auto scanned = scan(dir);
    auto noise = std::make_shared<const std::vector<AudioClip>>(load_noise_clips(scanned.noise_files));
    TrainConfig cfg;
    cfg.epochs = 5;
    CorpusSplit train(scanned.records, Split::train, noise, {}, cfg.rng_seed, true);
    CorpusSplit val(scanned.records, Split::val, noise, {}, 1, false);
    auto model = CENet<float>::build(ModelConfig::for_variant(Variant::cenet6), cfg.rng_seed);
    Trainer t(model, cfg);
    const auto r = t.fit(train, &val, *noise);
    const double acc = r.epochs.back().val_acc.value_or(0.0);
    c.check(acc >= 0.70, "validation accuracy " + std::to_string(acc));
  });
  report(c);
}

}  // namespace

int main() {
  footprint();
  frontend();
  numeric_core();
  gcn_properties();
  trainer();
  eval();
  smoke();
  std::cout << (g_failed ? "acceptance: " + std::to_string(g_failed) + " criteria failed\n" : "acceptance: all passed\n");
  return g_failed ? 1 : 0;
}
