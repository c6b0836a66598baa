#pragma once

#include <filesystem>
#include <vector>

namespace kws {

inline constexpr int kSampleRate = 16000;
inline constexpr int kClipSamples = kSampleRate;  // one second

struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRate;
};

/// Reads a mono 16 kHz RIFF WAV (PCM16 or 32-bit float) and pads with
/// trailing zeros or center-crops to exactly one second. No resampling.
AudioClip load_wav(const std::filesystem::path& path);

/// Reads a mono 16 kHz WAV at its native length (used for background noise).
AudioClip load_wav_raw(const std::filesystem::path& path);

/// Writes a mono PCM16 WAV; samples are clipped to [-1,1].
void save_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Zero-pads at the end or center-crops to `length` samples.
AudioClip fit_length(AudioClip clip, std::size_t length = kClipSamples);

/// Throws std::invalid_argument unless the clip is a finite one-second 16 kHz clip.
void validate_clip(const AudioClip& clip);

double mean_power(const std::vector<float>& samples);

}  // namespace kws
