#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace kws {

/// Flat `key = value` text configuration. Blank lines and `#` comments are
/// ignored; later keys override earlier ones. Keys are kept sorted so that
/// writing is deterministic.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);

  void save(const std::filesystem::path& path) const;
  std::string to_string() const;

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;

  // Keys of `overrides` win.
  void merge(const KeyValues& overrides);

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace kws
