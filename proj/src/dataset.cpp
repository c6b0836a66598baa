#include "kws/dataset.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace kws {

namespace fs = std::filesystem;

int label_for_word(const std::string& word) {
  for (int i = 0; i < kNumKeywords; ++i) {
    if (kKeywords[i] == word) return i;
  }
  return kUnknownLabel;
}

std::string label_name(int label) {
  if (label >= 0 && label < kNumKeywords) return kKeywords[label];
  if (label == kUnknownLabel) return "_unknown_";
  if (label == kSilenceLabel) return "_silence_";
  throw std::out_of_range("label " + std::to_string(label) + " outside [0,12)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val" || name == "validation") return Split::val;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "' (train|val|test)");
}

std::optional<std::string> speaker_from_filename(const std::string& filename) {
  constexpr std::string_view marker = "_nohash_";
  if (filename.size() < 4 || filename.substr(filename.size() - 4) != ".wav") return std::nullopt;
  const auto pos = filename.find(marker);
  if (pos == std::string::npos || pos == 0) return std::nullopt;
  const auto take = filename.substr(pos + marker.size(), filename.size() - 4 - pos - marker.size());
  if (take.empty() || !std::all_of(take.begin(), take.end(), [](unsigned char c) { return std::isdigit(c); })) {
    return std::nullopt;
  }
  return filename.substr(0, pos);
}

double speaker_percentile(const std::string& speaker_id) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(speaker_id.data(), speaker_id.size(), digest, &len, EVP_sha1(), nullptr) != 1 || len != 20) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  // The digest read as a big-endian integer, modulo 2^27.
  const std::uint32_t tail = (static_cast<std::uint32_t>(digest[16]) << 24) |
                             (static_cast<std::uint32_t>(digest[17]) << 16) |
                             (static_cast<std::uint32_t>(digest[18]) << 8) | static_cast<std::uint32_t>(digest[19]);
  constexpr std::uint32_t kMaxPerClass = (1u << 27) - 1;
  return static_cast<double>(tail & kMaxPerClass) * (100.0 / kMaxPerClass);
}

Split assign_split(const std::string& speaker_id, double val_pct, double test_pct) {
  if (speaker_id.empty()) throw std::invalid_argument("empty speaker id");
  const double p = speaker_percentile(speaker_id);
  if (p < val_pct) return Split::val;
  if (p < val_pct + test_pct) return Split::test;
  return Split::train;
}

ScanResult scan(const fs::path& dir, double val_pct, double test_pct) {
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  ScanResult result;
  for (const auto& word_dir : fs::directory_iterator(dir)) {
    if (!word_dir.is_directory()) continue;
    const std::string word = word_dir.path().filename().string();
    const bool noise = word == kBackgroundNoiseDir;
    for (const auto& entry : fs::directory_iterator(word_dir.path())) {
      if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
      if (noise) {
        result.noise_files.push_back(entry.path());
        continue;
      }
      const auto speaker = speaker_from_filename(entry.path().filename().string());
      if (!speaker) {
        result.warnings.push_back("skipping malformed file name: " + entry.path().string());
        continue;
      }
      SampleRecord rec;
      rec.path = entry.path();
      rec.raw_word = word;
      rec.label = label_for_word(word);
      rec.speaker_id = *speaker;
      rec.split = assign_split(*speaker, val_pct, test_pct);
      result.records.push_back(std::move(rec));
    }
  }
  if (result.records.empty()) throw std::runtime_error("no recordings found under " + dir.string());
  std::sort(result.records.begin(), result.records.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; });
  std::sort(result.noise_files.begin(), result.noise_files.end());
  return result;
}

SplitCounts count_splits(const std::vector<SampleRecord>& records) {
  SplitCounts c;
  for (const auto& r : records) {
    switch (r.split) {
      case Split::train: ++c.train; break;
      case Split::val: ++c.val; break;
      case Split::test: ++c.test; break;
    }
  }
  return c;
}

void write_manifest(std::ostream& out, const std::vector<SampleRecord>& records) {
  out << "path,label,speaker,split\n";
  for (const auto& r : records) {
    out << r.path.generic_string() << ',' << r.label << ',' << r.speaker_id << ',' << to_string(r.split) << '\n';
  }
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "path,label,speaker,split") {
    throw std::runtime_error("manifest " + path.string() + " lacks the path,label,speaker,split header");
  }
  std::vector<SampleRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 4) throw std::runtime_error("malformed manifest row: " + line);
    SampleRecord r;
    r.path = cols[0];
    r.raw_word = r.path.parent_path().filename().string();
    r.label = std::stoi(cols[1]);
    if (r.label < 0 || r.label >= kNumClasses) throw std::runtime_error("manifest label out of range: " + line);
    r.speaker_id = cols[2];
    r.split = parse_split(cols[3]);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<AudioClip> load_noise_clips(const std::vector<fs::path>& files) {
  std::vector<AudioClip> clips;
  for (const auto& f : files) {
    auto clip = load_wav_raw(f);
    if (clip.samples.size() >= static_cast<std::size_t>(kClipSamples)) clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<SilenceSpec> plan_silence(const std::vector<AudioClip>& noise, std::size_t count, std::uint64_t seed) {
  if (count == 0) return {};
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    if (noise[i].samples.size() >= static_cast<std::size_t>(kClipSamples)) usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("silence synthesis needs at least one noise clip of >= 1 s");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_source(0, usable.size() - 1);
  std::uniform_real_distribution<float> pick_gain(0.0f, 1.0f);
  std::vector<SilenceSpec> specs(count);
  for (auto& s : specs) {
    s.source = usable[pick_source(rng)];
    std::uniform_int_distribution<std::size_t> pick_offset(0, noise[s.source].samples.size() - kClipSamples);
    s.offset = pick_offset(rng);
    s.gain = pick_gain(rng);
  }
  return specs;
}

AudioClip render_silence(const std::vector<AudioClip>& noise, const SilenceSpec& spec) {
  const auto& src = noise.at(spec.source).samples;
  if (spec.offset + kClipSamples > src.size()) throw std::out_of_range("silence crop outside noise clip");
  AudioClip clip;
  clip.samples.assign(src.begin() + static_cast<std::ptrdiff_t>(spec.offset),
                      src.begin() + static_cast<std::ptrdiff_t>(spec.offset + kClipSamples));
  for (auto& v : clip.samples) v *= spec.gain;
  return clip;
}

std::vector<AudioClip> make_silence(const std::vector<AudioClip>& noise, std::size_t count, std::uint64_t seed) {
  if (noise.empty()) throw std::invalid_argument("silence synthesis needs at least one noise clip");
  std::vector<AudioClip> out;
  for (const auto& spec : plan_silence(noise, count, seed)) out.push_back(render_silence(noise, spec));
  return out;
}

CorpusSplit::CorpusSplit(const std::vector<SampleRecord>& records, Split split,
                         std::shared_ptr<const std::vector<AudioClip>> noise, BalanceConfig balance,
                         std::uint64_t seed, bool resample_each_epoch)
    : noise_(std::move(noise)), balance_(balance), resample_(resample_each_epoch) {
  for (const auto& r : records) {
    if (r.split != split) continue;
    (r.label == kUnknownLabel ? unknowns_ : keywords_).push_back(r);
  }
  if (!noise_) noise_ = std::make_shared<const std::vector<AudioClip>>();
  compose(seed);
}

void CorpusSplit::compose(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  entries_.clear();
  for (const auto& r : keywords_) entries_.push_back({r.label, &r, {}});

  const auto want = [&](double fraction) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(keywords_.size())));
  };
  std::vector<std::size_t> order(unknowns_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_unknown = std::min(want(balance_.unknown_fraction), unknowns_.size());
  for (std::size_t i = 0; i < n_unknown; ++i) entries_.push_back({kUnknownLabel, &unknowns_[order[i]], {}});

  if (!noise_->empty()) {
    for (const auto& spec : plan_silence(*noise_, want(balance_.silence_fraction), rng())) {
      entries_.push_back({kSilenceLabel, nullptr, spec});
    }
  }
}

void CorpusSplit::begin_epoch(std::uint64_t epoch_seed) {
  if (resample_) compose(epoch_seed);
}

LabeledClip CorpusSplit::get(std::size_t index) const {
  const auto& e = entries_.at(index);
  if (e.record) return {load_wav(e.record->path), e.label};
  return {render_silence(*noise_, e.silence), e.label};
}

}  // namespace kws
