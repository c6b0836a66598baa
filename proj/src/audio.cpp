#include "kws/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

namespace kws {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put32(std::ostream& out, std::uint32_t v) {
  put16(out, static_cast<std::uint16_t>(v & 0xffff));
  put16(out, static_cast<std::uint16_t>(v >> 16));
}

}  // namespace

AudioClip load_wav_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read wav file " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("not a RIFF/WAVE file" + where);
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* payload = nullptr;
  std::size_t payload_size = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw std::runtime_error("short fmt chunk" + where);
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format == kFormatExtensible && avail >= 26) format = le16(bytes.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      payload = bytes.data() + body;
      payload_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || payload == nullptr) throw std::runtime_error("missing fmt or data chunk" + where);
  if (channels != 1) {
    throw std::runtime_error("unsupported channel count " + std::to_string(channels) + " (mono only)" + where);
  }
  if (rate != static_cast<std::uint32_t>(kSampleRate)) {
    throw std::runtime_error("unsupported sample rate " + std::to_string(rate) + " Hz (16000 required)" + where);
  }

  AudioClip clip;
  if (format == kFormatPcm && bits == 16) {
    const std::size_t n = payload_size / 2;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = static_cast<std::int16_t>(le16(payload + 2 * i));
      clip.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else if (format == kFormatFloat && bits == 32) {
    const std::size_t n = payload_size / 4;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const float v = std::bit_cast<float>(le32(payload + 4 * i));
      if (!std::isfinite(v)) throw std::runtime_error("non-finite sample" + where);
      clip.samples[i] = std::clamp(v, -1.0f, 1.0f);
    }
  } else {
    throw std::runtime_error("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits) +
                             " bits" + where);
  }
  return clip;
}

AudioClip load_wav(const std::filesystem::path& path) { return fit_length(load_wav_raw(path)); }

AudioClip fit_length(AudioClip clip, std::size_t length) {
  auto& s = clip.samples;
  if (s.size() > length) {
    const std::size_t start = (s.size() - length) / 2;
    s.erase(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(start));
    s.resize(length);
  } else {
    s.resize(length, 0.0f);
  }
  return clip;
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write wav file " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  put32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  put32(out, static_cast<std::uint32_t>(clip.sample_rate_hz * 2));
  put16(out, 2);
  put16(out, 16);
  out.write("data", 4);
  put32(out, data_bytes);
  for (float v : clip.samples) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    put16(out, static_cast<std::uint16_t>(q));
  }
}

void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate_hz != kSampleRate) throw std::invalid_argument("clip sample rate must be 16000 Hz");
  if (clip.samples.size() != static_cast<std::size_t>(kClipSamples)) {
    throw std::invalid_argument("clip must hold exactly 16000 samples, got " + std::to_string(clip.samples.size()));
  }
  for (float v : clip.samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("clip contains non-finite samples");
  }
}

double mean_power(const std::vector<float>& samples) {
  if (samples.empty()) return 0.0;
  double acc = 0;
  for (float v : samples) acc += static_cast<double>(v) * v;
  return acc / static_cast<double>(samples.size());
}

}  // namespace kws
