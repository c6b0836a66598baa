#include "kws/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace kws {

namespace {

constexpr std::array<char, 4> kMagic{'K', 'W', 'S', 'C'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("cannot open checkpoint " + path.string());
  }

  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw std::runtime_error("truncated checkpoint " + path_.string());
    }
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    if (shape_numel(rec.shape) != static_cast<std::int64_t>(rec.values.size())) {
      throw std::invalid_argument("checkpoint record " + rec.name + " has inconsistent shape");
    }
    put_u32(out, static_cast<std::uint32_t>(rec.name.size()));
    out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    put_u32(out, static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : rec.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  Reader in(path);
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (magic != kMagic) throw std::runtime_error("not a checkpoint (bad magic): " + path.string());
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.u32();
  std::vector<NamedArray> records;
  records.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    NamedArray rec;
    const auto name_len = in.u32();
    if (name_len > 4096) throw std::runtime_error("corrupt checkpoint record name");
    rec.name.resize(name_len);
    in.read(rec.name.data(), name_len);
    const auto rank = in.u32();
    if (rank > 8) throw std::runtime_error("corrupt checkpoint record rank");
    std::int64_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      rec.shape.push_back(in.u32());
      n *= rec.shape.back();
    }
    if (n <= 0 || n > (std::int64_t{1} << 32)) throw std::runtime_error("corrupt checkpoint record dims");
    rec.values.resize(static_cast<std::size_t>(n));
    for (auto& v : rec.values) v = std::bit_cast<float>(in.u32());
    records.push_back(std::move(rec));
  }
  if (!in.at_end()) throw std::runtime_error("trailing bytes in checkpoint " + path.string());
  return records;
}

}  // namespace kws
