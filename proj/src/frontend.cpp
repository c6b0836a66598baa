#include "kws/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace kws {

namespace {

// FFTW's planner is not thread-safe; execution with the new-array API is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "mfcc") return FeatureKind::mfcc;
  if (name == "fbank") return FeatureKind::fbank;
  throw std::invalid_argument("unknown feature kind '" + name + "' (mfcc|fbank)");
}

std::string to_string(FeatureKind kind) { return kind == FeatureKind::mfcc ? "mfcc" : "fbank"; }

MelScale parse_mel_scale(const std::string& name) {
  if (name == "htk") return MelScale::htk;
  if (name == "slaney") return MelScale::slaney;
  throw std::invalid_argument("unknown mel scale '" + name + "' (htk|slaney)");
}

std::string to_string(MelScale scale) { return scale == MelScale::htk ? "htk" : "slaney"; }

void FrontendConfig::validate(int sample_rate_hz) const {
  if (window_ms <= 0 || hop_ms <= 0) throw std::invalid_argument("frontend: window and hop must be positive");
  if (n_mels < 1 || n_coeffs < 1) throw std::invalid_argument("frontend: n_mels and n_coeffs must be positive");
  if (n_coeffs > n_mels) throw std::invalid_argument("frontend: n_coeffs must not exceed n_mels");
  if (!(band_low_hz >= 0 && band_low_hz < band_high_hz && band_high_hz <= sample_rate_hz / 2.0)) {
    throw std::invalid_argument("frontend: need 0 <= band_low_hz < band_high_hz <= sample_rate/2");
  }
  if (!(log_floor > 0)) throw std::invalid_argument("frontend: log floor must be positive");
}

int FrontendConfig::window_samples(int sample_rate_hz) const {
  return static_cast<int>(std::lround(window_ms * sample_rate_hz / 1000.0));
}

int FrontendConfig::hop_samples(int sample_rate_hz) const {
  return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0));
}

int FrontendConfig::fft_size(int sample_rate_hz) const {
  int n = 1;
  while (n < window_samples(sample_rate_hz)) n <<= 1;
  return n;
}

int FrontendConfig::frame_count(std::size_t n_samples, int sample_rate_hz) const {
  const int win = window_samples(sample_rate_hz);
  const auto padded = static_cast<long long>(n_samples) + 2LL * (win / 2);
  if (padded < win) return 0;
  return static_cast<int>((padded - win) / hop_samples(sample_rate_hz)) + 1;
}

double hz_to_mel(double hz, MelScale scale) {
  if (scale == MelScale::htk) return 2595.0 * std::log10(1.0 + hz / 700.0);
  // Slaney: linear below 1 kHz, logarithmic above.
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel, MelScale scale) {
  if (scale == MelScale::htk) return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

namespace {

// n_mels + 2 edge/center frequencies in Hz.
std::vector<double> mel_points_hz(const FrontendConfig& cfg) {
  const double lo = hz_to_mel(cfg.band_low_hz, cfg.mel_scale);
  const double hi = hz_to_mel(cfg.band_high_hz, cfg.mel_scale);
  std::vector<double> pts(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.n_mels + 1), cfg.mel_scale);
  }
  return pts;
}

}  // namespace

std::vector<double> mel_center_frequencies(const FrontendConfig& cfg) {
  auto pts = mel_points_hz(cfg);
  return {pts.begin() + 1, pts.end() - 1};
}

std::vector<double> dct2_matrix(int n_out, int n_in) {
  std::vector<double> d(static_cast<std::size_t>(n_out) * n_in);
  for (int k = 0; k < n_out; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
    for (int n = 0; n < n_in; ++n) {
      d[static_cast<std::size_t>(k) * n_in + n] = s * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * n_in));
    }
  }
  return d;
}

struct Frontend::FftPlan {
  int size = 0;
  fftw_plan plan = nullptr;

  explicit FftPlan(int n) : size(n) {
    std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n));
    std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n / 2 + 1));
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in.get(), out.get(), FFTW_ESTIMATE);
    if (!plan) throw std::runtime_error("failed to create FFT plan");
  }
  ~FftPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
};

Frontend::Frontend(FrontendConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int win = cfg_.window_samples();
  const int n_fft = cfg_.fft_size();
  const int n_bins = n_fft / 2 + 1;

  // Periodic Hann.
  window_.resize(win);
  for (int i = 0; i < win; ++i) window_[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

  const auto pts = mel_points_hz(cfg_);
  filterbank_.assign(static_cast<std::size_t>(cfg_.n_mels) * n_bins, 0.0);
  for (int m = 0; m < cfg_.n_mels; ++m) {
    const double left = pts[m], center = pts[m + 1], right = pts[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / n_fft;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      filterbank_[static_cast<std::size_t>(m) * n_bins + k] = std::max(0.0, std::min(rise, fall));
    }
  }
  dct_ = dct2_matrix(cfg_.n_coeffs, cfg_.n_mels);
  plan_ = std::make_shared<FftPlan>(n_fft);
}

std::vector<double> Frontend::magnitude_spectra(const AudioClip& clip, int& n_frames) const {
  validate_clip(clip);
  const int win = cfg_.window_samples();
  const int hop = cfg_.hop_samples();
  const int n_fft = plan_->size;
  const int n_bins = n_fft / 2 + 1;
  const int half = win / 2;
  const auto n = static_cast<int>(clip.samples.size());
  n_frames = cfg_.frame_count(clip.samples.size());

  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(n_fft));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(n_bins));
  std::vector<double> mags(static_cast<std::size_t>(n_frames) * n_bins);
  for (int t = 0; t < n_frames; ++t) {
    const int start = t * hop - half;
    double* buf = in.get();
    for (int i = 0; i < n_fft; ++i) {
      const int src = start + i;
      buf[i] = (i < win && src >= 0 && src < n) ? window_[i] * clip.samples[src] : 0.0;
    }
    fftw_execute_dft_r2c(plan_->plan, buf, out.get());
    for (int k = 0; k < n_bins; ++k) {
      mags[static_cast<std::size_t>(t) * n_bins + k] = std::hypot(out.get()[k][0], out.get()[k][1]);
    }
  }
  return mags;
}

FeatureMatrix Frontend::fbank(const AudioClip& clip) const {
  int n_frames = 0;
  const auto mags = magnitude_spectra(clip, n_frames);
  const int n_bins = plan_->size / 2 + 1;
  FeatureMatrix fm;
  fm.frames = n_frames;
  fm.coeffs = cfg_.n_mels;
  fm.kind = FeatureKind::fbank;
  fm.values.resize(static_cast<std::size_t>(n_frames) * cfg_.n_mels);
  for (int t = 0; t < n_frames; ++t) {
    const double* spec = mags.data() + static_cast<std::size_t>(t) * n_bins;
    for (int m = 0; m < cfg_.n_mels; ++m) {
      const double* w = filterbank_.data() + static_cast<std::size_t>(m) * n_bins;
      double e = 0;
      for (int k = 0; k < n_bins; ++k) e += w[k] * spec[k];
      fm.values[static_cast<std::size_t>(t) * cfg_.n_mels + m] = static_cast<float>(std::log(std::max(e, cfg_.log_floor)));
    }
  }
  return fm;
}

FeatureMatrix Frontend::mfcc(const AudioClip& clip) const {
  const FeatureMatrix mel = fbank(clip);
  FeatureMatrix fm;
  fm.frames = mel.frames;
  fm.coeffs = cfg_.n_coeffs;
  fm.kind = FeatureKind::mfcc;
  fm.values.resize(static_cast<std::size_t>(fm.frames) * fm.coeffs);
  for (int t = 0; t < fm.frames; ++t) {
    const float* row = mel.values.data() + static_cast<std::size_t>(t) * cfg_.n_mels;
    for (int k = 0; k < cfg_.n_coeffs; ++k) {
      const double* d = dct_.data() + static_cast<std::size_t>(k) * cfg_.n_mels;
      double acc = 0;
      for (int m = 0; m < cfg_.n_mels; ++m) acc += d[m] * row[m];
      fm.values[static_cast<std::size_t>(t) * fm.coeffs + k] = static_cast<float>(acc);
    }
  }
  return fm;
}

FeatureMatrix Frontend::compute(const AudioClip& clip) const {
  return cfg_.kind == FeatureKind::mfcc ? mfcc(clip) : fbank(clip);
}

FeatureMatrix compute_fbank(const AudioClip& clip, const FrontendConfig& cfg) { return Frontend(cfg).fbank(clip); }

FeatureMatrix compute_mfcc(const AudioClip& clip, const FrontendConfig& cfg) { return Frontend(cfg).mfcc(clip); }

}  // namespace kws
