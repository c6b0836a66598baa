#pragma once

#include <cstdint>
#include <vector>

#include "kws/audio.hpp"

namespace kws {

inline constexpr double kMaxShiftMs = 100.0;

/// Start index of the one-second crop taken from `noise_len` samples.
std::size_t noise_crop_offset(std::size_t noise_len, std::uint64_t seed);

/// Gain g such that 10·log10(signal_power / (g²·noise_power)) == snr_db.
double snr_gain(double signal_power, double noise_power, double snr_db);

/// clip + g·crop(noise), clipped to [-1,1]. The crop position comes from
/// `seed`. Throws std::invalid_argument for an all-zero noise crop and for an
/// all-zero clip (no SNR is defined for a silent signal).
AudioClip augment_noise(const AudioClip& clip, const AudioClip& noise, double snr_db, std::uint64_t seed);

/// Delays (positive) or advances (negative) by round(shift_ms·16) samples,
/// zero-filling the vacated positions.
AudioClip time_shift(const AudioClip& clip, double shift_ms);

}  // namespace kws
