#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kws/audio.hpp"

namespace kws {

inline constexpr int kNumClasses = 12;
inline constexpr int kNumKeywords = 10;
inline constexpr int kUnknownLabel = 10;
inline constexpr int kSilenceLabel = 11;
inline constexpr const char* kBackgroundNoiseDir = "_background_noise_";

inline const std::array<std::string, kNumKeywords> kKeywords = {"yes",  "no", "up",  "down", "left",
                                                                "right", "on", "off", "stop", "go"};

/// 0..9 for the keywords, kUnknownLabel for any other word.
int label_for_word(const std::string& word);
/// "yes".."go", "_unknown_", "_silence_".
std::string label_name(int label);

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct SampleRecord {
  std::filesystem::path path;
  std::string raw_word;
  int label = kUnknownLabel;
  std::string speaker_id;
  Split split = Split::train;
};

/// Speaker key: the file name up to "_nohash_", or nullopt when the name does
/// not follow "<speaker>_nohash_<take>.wav".
std::optional<std::string> speaker_from_filename(const std::string& filename);

/// SHA-1 of the speaker id reduced to a percentile in [0,100]: the low 27
/// bits of the digest scaled by 100/(2^27−1).
double speaker_percentile(const std::string& speaker_id);

/// val if percentile < val_pct, test if < val_pct + test_pct, else train.
Split assign_split(const std::string& speaker_id, double val_pct = 10.0, double test_pct = 10.0);

struct ScanResult {
  std::vector<SampleRecord> records;              // sorted by path
  std::vector<std::filesystem::path> noise_files;  // sorted
  std::vector<std::string> warnings;              // skipped files
};

/// Walks `<dir>/<word>/*.wav`. Files under _background_noise_ are returned
/// as noise sources, not records. Throws if the directory is missing or holds
/// no usable recordings.
ScanResult scan(const std::filesystem::path& dir, double val_pct = 10.0, double test_pct = 10.0);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t total() const { return train + val + test; }
};
SplitCounts count_splits(const std::vector<SampleRecord>& records);

void write_manifest(std::ostream& out, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

std::vector<AudioClip> load_noise_clips(const std::vector<std::filesystem::path>& files);

/// Recipe for one synthetic silence clip: a one-second crop of a noise
/// source scaled by `gain` in [0,1].
struct SilenceSpec {
  std::size_t source = 0;
  std::size_t offset = 0;
  float gain = 1.0f;
};

std::vector<SilenceSpec> plan_silence(const std::vector<AudioClip>& noise, std::size_t count, std::uint64_t seed);
AudioClip render_silence(const std::vector<AudioClip>& noise, const SilenceSpec& spec);
std::vector<AudioClip> make_silence(const std::vector<AudioClip>& noise, std::size_t count, std::uint64_t seed);

struct LabeledClip {
  AudioClip clip;
  int label = 0;
};

/// Indexed collection of labeled one-second clips.
class ClipSource {
 public:
  virtual ~ClipSource() = default;
  virtual std::size_t size() const = 0;
  virtual LabeledClip get(std::size_t index) const = 0;
  virtual int label(std::size_t index) const = 0;
  // Called by the trainer at the start of each epoch.
  virtual void begin_epoch(std::uint64_t /*epoch_seed*/) {}
};

class InMemoryClips : public ClipSource {
 public:
  InMemoryClips() = default;
  explicit InMemoryClips(std::vector<LabeledClip> clips) : clips_(std::move(clips)) {}

  std::size_t size() const override { return clips_.size(); }
  LabeledClip get(std::size_t index) const override { return clips_.at(index); }
  int label(std::size_t index) const override { return clips_.at(index).label; }
  void add(LabeledClip clip) { clips_.push_back(std::move(clip)); }

 private:
  std::vector<LabeledClip> clips_;
};

struct BalanceConfig {
  double unknown_fraction = 0.1;  // unknown count relative to keyword count
  double silence_fraction = 0.1;  // silence count relative to keyword count
};

/// One split of the corpus: every keyword recording, a random subset of
/// unknown-word recordings and synthetic silence clips. With `resample_each_epoch`,
/// begin_epoch() redraws the unknown subset and the silence crops.
class CorpusSplit : public ClipSource {
 public:
  CorpusSplit(const std::vector<SampleRecord>& records, Split split,
              std::shared_ptr<const std::vector<AudioClip>> noise, BalanceConfig balance, std::uint64_t seed,
              bool resample_each_epoch);

  std::size_t size() const override { return entries_.size(); }
  LabeledClip get(std::size_t index) const override;
  int label(std::size_t index) const override { return entries_.at(index).label; }
  void begin_epoch(std::uint64_t epoch_seed) override;

 private:
  struct Entry {
    int label = 0;
    const SampleRecord* record = nullptr;
    SilenceSpec silence;
  };
  void compose(std::uint64_t seed);

  std::vector<SampleRecord> keywords_;
  std::vector<SampleRecord> unknowns_;
  std::shared_ptr<const std::vector<AudioClip>> noise_;
  BalanceConfig balance_;
  bool resample_;
  std::vector<Entry> entries_;
};

}  // namespace kws
