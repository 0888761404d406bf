#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace misspec {

// Flat INI-style configuration: `[section]` headers, `key = value` lines,
// `#` or `;` comments. No nesting. Every lookup error names the source line.
class ConfigSection {
 public:
  struct Entry {
    std::string value;
    int line = 0;
  };

  ConfigSection() = default;
  ConfigSection(std::string name, std::string source) : name_(std::move(name)), source_(std::move(source)) {}

  const std::string& name() const noexcept { return name_; }
  const std::string& source() const noexcept { return source_; }

  void set(const std::string& key, std::string value, int line = 0);
  bool has(std::string_view key) const;
  const std::map<std::string, Entry, std::less<>>& entries() const noexcept { return entries_; }

  const std::string& get(std::string_view key) const;
  std::string get_or(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key) const;
  double get_double_or(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key) const;
  std::int64_t get_int_or(std::string_view key, std::int64_t fallback) const;
  std::vector<double> get_doubles(std::string_view key) const;
  std::vector<std::int64_t> get_ints(std::string_view key) const;
  std::vector<std::string> get_list(std::string_view key) const;

  // Throws ConfigError at the offending line.
  [[noreturn]] void fail(std::string_view key, const std::string& message) const;

 private:
  std::string name_;
  std::string source_;
  std::map<std::string, Entry, std::less<>> entries_;
};

class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "<config>");
  static Config parse_string(const std::string& text, const std::string& source = "<config>");
  static Config load(const std::string& path);

  bool has_section(std::string_view name) const;
  // Missing sections come back empty so that defaults apply.
  const ConfigSection& section(std::string_view name) const;
  ConfigSection& mutable_section(const std::string& name);
  const std::string& source() const noexcept { return source_; }

 private:
  std::string source_;
  std::map<std::string, ConfigSection, std::less<>> sections_;
};

// Helpers shared by the parsers.
std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);
std::optional<double> parse_double(std::string_view text);
std::string format_double(double value);  // shortest round-trip form

}  // namespace misspec
