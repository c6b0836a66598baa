#include "kws/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace kws {

std::size_t noise_crop_offset(std::size_t noise_len, std::uint64_t seed) {
  if (noise_len < static_cast<std::size_t>(kClipSamples)) {
    throw std::invalid_argument("noise clip shorter than one second");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, noise_len - kClipSamples);
  return pick(rng);
}

double snr_gain(double signal_power, double noise_power, double snr_db) {
  if (!(noise_power > 0)) throw std::invalid_argument("noise has zero power; target SNR unreachable");
  return std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

AudioClip augment_noise(const AudioClip& clip, const AudioClip& noise, double snr_db, std::uint64_t seed) {
  validate_clip(clip);
  const std::size_t offset = noise_crop_offset(noise.samples.size(), seed);
  const std::vector<float> crop(noise.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                                noise.samples.begin() + static_cast<std::ptrdiff_t>(offset + kClipSamples));
  const double ps = mean_power(clip.samples);
  if (!(ps > 0)) throw std::invalid_argument("signal has zero power; SNR undefined");
  const double g = snr_gain(ps, mean_power(crop), snr_db);

  AudioClip out = clip;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double v = clip.samples[i] + g * crop[i];
    out.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

AudioClip time_shift(const AudioClip& clip, double shift_ms) {
  if (!(std::abs(shift_ms) <= kMaxShiftMs)) throw std::invalid_argument("time shift must lie within [-100,100] ms");
  const auto shift = static_cast<long long>(std::llround(shift_ms * clip.sample_rate_hz / 1000.0));
  const auto n = static_cast<long long>(clip.samples.size());
  AudioClip out = clip;
  std::fill(out.samples.begin(), out.samples.end(), 0.0f);
  for (long long i = 0; i < n; ++i) {
    const long long src = i - shift;
    if (src >= 0 && src < n) out.samples[static_cast<std::size_t>(i)] = clip.samples[static_cast<std::size_t>(src)];
  }
  return out;
}

}  // namespace kws
