#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kws/tensor.hpp"

namespace kws {

// On-disk layout, all integers little-endian:
//
//   magic   4 bytes  "KWSC"
//   version u32      kCheckpointVersion
//   count   u32      number of records
//   record  (count times)
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u32 × rank
//     payload  f32 × product(dims)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& records);

/// Throws std::runtime_error on bad magic, version mismatch or truncation.
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

}  // namespace kws
