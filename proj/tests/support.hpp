#pragma once

// Reference implementations and fixtures shared by the unit tests and the
// acceptance runner. Everything here is written with plain loops and does not
// call into the library's numeric code.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "kws/audio.hpp"
#include "kws/tensor.hpp"

namespace kws::test {

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = true,
                                    double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = n(rng);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

// Keeps entries away from 0 so ReLU kinks stay outside the finite-difference step.
inline Tensor<double> random_tensor_away_from_zero(std::mt19937_64& rng, Shape shape, double margin = 0.05) {
  auto t = random_tensor(rng, std::move(shape));
  for (auto& x : t.mutable_data()) {
    if (std::abs(x) < margin) x = x < 0 ? x - margin : x + margin;
  }
  return t;
}

// (B,Cin,H,W) * (Cout,Cin,k,k)
inline std::vector<double> naive_conv2d(const std::vector<double>& x, Shape xs, const std::vector<double>& w,
                                        Shape ws, int stride, int pad, Shape& out_shape) {
  const auto B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const auto O = ws[0], K = ws[2];
  const auto Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  out_shape = {B, O, Ho, Wo};
  std::vector<double> y(static_cast<std::size_t>(B * O * Ho * Wo), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t i = 0; i < Ho; ++i)
        for (std::int64_t j = 0; j < Wo; ++j) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t p = 0; p < K; ++p)
              for (std::int64_t q = 0; q < K; ++q) {
                const auto r = i * stride - pad + p, s = j * stride - pad + q;
                if (r < 0 || r >= H || s < 0 || s >= W) continue;
                acc += x[((b * C + c) * H + r) * W + s] * w[((o * C + c) * K + p) * K + q];
              }
          y[((b * O + o) * Ho + i) * Wo + j] = acc;
        }
  return y;
}

inline std::vector<double> naive_avg_pool(const std::vector<double>& x, Shape xs, int k, int stride,
                                          Shape& out_shape) {
  const auto B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const auto Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
  out_shape = {B, C, Ho, Wo};
  std::vector<double> y;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < Ho; ++i)
        for (std::int64_t j = 0; j < Wo; ++j) {
          double acc = 0.0;
          for (int p = 0; p < k; ++p)
            for (int q = 0; q < k; ++q) acc += x[((b * C + c) * H + i * stride + p) * W + j * stride + q];
          y.push_back(acc / (k * k));
        }
  return y;
}

// Per-node non-local update for one graph. X: N×c (row-major), w_theta/w_phi: e×c, w: c×c.
// x̃_i = ReLU( Σ_j f(x_i,x_j)/C(x) · (x_jᵀ W) ), f = exp(θ(x_i)·φ(x_j)).
struct PerNodeResult {
  std::vector<double> affinity;  // N×N
  std::vector<double> messages;  // N×c
};

inline PerNodeResult naive_non_local(const std::vector<double>& X, int N, int c, const std::vector<double>& w_theta,
                                     const std::vector<double>& w_phi, const std::vector<double>& w, int e) {
  auto embed = [&](const std::vector<double>& m, int i) {
    std::vector<double> out(e, 0.0);
    for (int a = 0; a < e; ++a)
      for (int d = 0; d < c; ++d) out[a] += m[a * c + d] * X[i * c + d];
    return out;
  };
  PerNodeResult r;
  r.affinity.assign(static_cast<std::size_t>(N) * N, 0.0);
  r.messages.assign(static_cast<std::size_t>(N) * c, 0.0);
  for (int i = 0; i < N; ++i) {
    const auto ti = embed(w_theta, i);
    std::vector<double> logits(N);
    for (int j = 0; j < N; ++j) {
      const auto pj = embed(w_phi, j);
      double dot = 0.0;
      for (int a = 0; a < e; ++a) dot += ti[a] * pj[a];
      logits[j] = dot;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (int j = 0; j < N; ++j) z += std::exp(logits[j] - mx);
    for (int j = 0; j < N; ++j) r.affinity[i * N + j] = std::exp(logits[j] - mx) / z;
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int j = 0; j < N; ++j) {
        double wx = 0.0;
        for (int d = 0; d < c; ++d) wx += X[j * c + d] * w[d * c + ch];
        acc += r.affinity[i * N + j] * wx;
      }
      r.messages[i * c + ch] = std::max(0.0, acc);
    }
  }
  return r;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences for every element of every input. `loss` must rebuild
// the graph from the inputs on each call.
inline GradCheckResult grad_check(std::vector<Tensor<double>>& inputs,
                                  const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& loss,
                                  double h = 1e-4) {
  for (auto& t : inputs) t.zero_grad();
  loss(inputs).backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      double up;
      {
        NoGradGuard g;
        up = loss(inputs).item();
      }
      data[i] = orig - h;
      double down;
      {
        NoGradGuard g;
        down = loss(inputs).item();
      }
      data[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(numeric), std::abs(a), 1e-6});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(numeric - a) / denom);
      ++res.checked;
    }
  }
  return res;
}

// Magnitude of bin k of the DFT of a windowed, zero-padded frame.
inline double dft_magnitude(const std::vector<double>& frame, int n_fft, int k) {
  std::complex<double> acc = 0.0;
  for (std::size_t n = 0; n < frame.size(); ++n) {
    const double ang = -2.0 * std::numbers::pi * k * static_cast<double>(n) / n_fft;
    acc += frame[n] * std::complex<double>(std::cos(ang), std::sin(ang));
  }
  return std::abs(acc);
}

inline AudioClip sine_clip(double freq_hz, double amplitude = 0.5, std::size_t n = kClipSamples) {
  AudioClip clip;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    clip.samples[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * i / kSampleRate));
  }
  return clip;
}

inline AudioClip noise_clip(std::uint64_t seed, double amplitude = 0.1, std::size_t n = kClipSamples) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, amplitude);
  AudioClip clip;
  clip.samples.resize(n);
  for (auto& s : clip.samples) s = static_cast<float>(std::clamp(d(rng), -1.0, 1.0));
  return clip;
}

// A class-dependent chirp plus noise: easy to separate, never silent.
inline AudioClip word_clip(int label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  const double f0 = 200.0 + 260.0 * label, f1 = f0 * (1.5 + jitter(rng));
  AudioClip clip = noise_clip(seed ^ 0xabcdefULL, 0.02);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    const double env = std::sin(std::numbers::pi * t);
    clip.samples[i] += static_cast<float>(0.4 * env * std::sin(2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) * t * t)));
  }
  return clip;
}

struct RocOracle {
  std::vector<double> far, frr;
};

// O(S·T) double loop.
inline RocOracle brute_force_roc(const std::vector<double>& scores, const std::vector<bool>& target, int n) {
  RocOracle r;
  for (int t = 0; t < n; ++t) {
    const double tau = static_cast<double>(t) / (n - 1);
    double fa = 0, fr = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (target[i]) {
        pos += 1;
        if (scores[i] < tau) fr += 1;
      } else {
        neg += 1;
        if (scores[i] >= tau) fa += 1;
      }
    }
    r.far.push_back(fa / neg);
    r.frr.push_back(fr / pos);
  }
  return r;
}

// Writes a miniature corpus in the dataset layout: every listed word gets
// `per_word` clips from a few speakers, plus one background-noise file.
inline void write_toy_corpus(const std::filesystem::path& root, const std::vector<std::string>& words, int per_word,
                             int speakers = 12) {
  std::filesystem::create_directories(root / "_background_noise_");
  save_wav(root / "_background_noise_" / "white.wav", noise_clip(99, 0.2, 3 * kClipSamples));
  std::uint64_t seed = 1;
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::filesystem::create_directories(root / words[w]);
    for (int i = 0; i < per_word; ++i) {
      const auto speaker = "spk" + std::to_string((i * 7 + static_cast<int>(w)) % speakers) + "a";
      const auto name = speaker + "_nohash_" + std::to_string(i) + ".wav";
      save_wav(root / words[w] / name, word_clip(static_cast<int>(w % 12), seed++));
    }
  }
}

}  // namespace kws::test
