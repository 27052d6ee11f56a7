#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace unisal {

/// Flat `key = value` text configuration. Lines starting with '#' are
/// comments; keys keep their section prefix (e.g. "model.rnn_channels").
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& origin = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  void set(const std::string& key, const std::string& value) { items_[key] = value; }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::size_t value) { items_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { items_[key] = value ? "true" : "false"; }
  void set(const std::string& key, const char* value) { items_[key] = value; }
  void merge(const KeyValues& other);

  bool has(const std::string& key) const { return items_.count(key) != 0; }
  std::optional<std::string> find(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& items() const { return items_; }

 private:
  std::map<std::string, std::string> items_;
};

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);
/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace unisal
