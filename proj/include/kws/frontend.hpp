#pragma once

#include <memory>
#include <string>
#include <vector>

#include "kws/audio.hpp"

namespace kws {

enum class FeatureKind { mfcc, fbank };
enum class MelScale { htk, slaney };

FeatureKind parse_feature_kind(const std::string& name);
std::string to_string(FeatureKind kind);
MelScale parse_mel_scale(const std::string& name);
std::string to_string(MelScale scale);

struct FrontendConfig {
  double window_ms = 30.0;
  double hop_ms = 10.0;
  int n_mels = 40;
  int n_coeffs = 40;
  double band_low_hz = 20.0;
  double band_high_hz = 4000.0;
  FeatureKind kind = FeatureKind::mfcc;
  MelScale mel_scale = MelScale::htk;
  double log_floor = 1e-10;

  void validate(int sample_rate_hz = kSampleRate) const;
  int window_samples(int sample_rate_hz = kSampleRate) const;
  int hop_samples(int sample_rate_hz = kSampleRate) const;
  // Next power of two >= the window length.
  int fft_size(int sample_rate_hz = kSampleRate) const;
  // Frames after padding window/2 samples on both sides.
  int frame_count(std::size_t n_samples, int sample_rate_hz = kSampleRate) const;
};

/// t×f time-frequency plane, row-major by frame.
struct FeatureMatrix {
  int frames = 0;
  int coeffs = 0;
  FeatureKind kind = FeatureKind::mfcc;
  std::vector<float> values;

  float at(int t, int f) const { return values[static_cast<std::size_t>(t) * coeffs + f]; }
};

double hz_to_mel(double hz, MelScale scale);
double mel_to_hz(double mel, MelScale scale);

/// Center frequencies (Hz) of the triangular filters, n_mels entries.
std::vector<double> mel_center_frequencies(const FrontendConfig& cfg);

/// Orthonormal DCT-II basis, rows = output coefficients: D[k][n].
std::vector<double> dct2_matrix(int n_out, int n_in);

/// Reusable log-mel / MFCC extractor. Holds the FFT plan and filterbank;
/// const member functions may be called concurrently.
class Frontend {
 public:
  explicit Frontend(FrontendConfig cfg = {});

  const FrontendConfig& config() const { return cfg_; }
  // n_mels × (fft_size/2+1), row-major.
  const std::vector<double>& filterbank() const { return filterbank_; }

  FeatureMatrix fbank(const AudioClip& clip) const;
  FeatureMatrix mfcc(const AudioClip& clip) const;
  FeatureMatrix compute(const AudioClip& clip) const;

 private:
  struct FftPlan;

  // n_frames × (fft_size/2+1) magnitude spectra.
  std::vector<double> magnitude_spectra(const AudioClip& clip, int& n_frames) const;

  FrontendConfig cfg_;
  std::vector<double> window_;
  std::vector<double> filterbank_;
  std::vector<double> dct_;
  std::shared_ptr<FftPlan> plan_;
};

FeatureMatrix compute_fbank(const AudioClip& clip, const FrontendConfig& cfg);
FeatureMatrix compute_mfcc(const AudioClip& clip, const FrontendConfig& cfg);

}  // namespace kws
