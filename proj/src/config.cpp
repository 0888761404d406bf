#include "misspec/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <fstream>
#include <sstream>

#include "misspec/error.hpp"

namespace misspec {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = text.find(sep, start);
    parts.push_back(trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::optional<double> parse_double(std::string_view text) {
  const std::string s = trim(text);
  if (s.empty()) return std::nullopt;
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) return std::nullopt;
  return v;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void ConfigSection::set(const std::string& key, std::string value, int line) {
  entries_[key] = Entry{std::move(value), line};
}

bool ConfigSection::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

void ConfigSection::fail(std::string_view key, const std::string& message) const {
  const auto it = entries_.find(key);
  const int line = it == entries_.end() ? 0 : it->second.line;
  const std::string qualified = name_.empty() ? std::string(key) : name_ + "." + std::string(key);
  throw ConfigError(source_, line, qualified, message);
}

const std::string& ConfigSection::get(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) fail(key, "missing required key");
  return it->second.value;
}

std::string ConfigSection::get_or(std::string_view key, std::string fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second.value;
}

double ConfigSection::get_double(std::string_view key) const {
  const auto v = parse_double(get(key));
  if (!v) fail(key, "expected a real number, got '" + get(key) + "'");
  return *v;
}

double ConfigSection::get_double_or(std::string_view key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t ConfigSection::get_int(std::string_view key) const {
  const std::string& text = get(key);
  std::int64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    // Accept integral reals such as 1e5.
    const auto d = parse_double(text);
    if (!d || *d != static_cast<double>(static_cast<std::int64_t>(*d)))
      fail(key, "expected an integer, got '" + text + "'");
    return static_cast<std::int64_t>(*d);
  }
  return v;
}

std::int64_t ConfigSection::get_int_or(std::string_view key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::vector<std::string> ConfigSection::get_list(std::string_view key) const {
  std::vector<std::string> out;
  for (auto& part : split(get(key), ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::vector<double> ConfigSection::get_doubles(std::string_view key) const {
  std::vector<double> out;
  for (const auto& part : get_list(key)) {
    const auto v = parse_double(part);
    if (!v) fail(key, "expected a list of reals, bad entry '" + part + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::int64_t> ConfigSection::get_ints(std::string_view key) const {
  std::vector<std::int64_t> out;
  for (const auto& part : get_list(key)) {
    const auto v = parse_double(part);
    if (!v || *v != static_cast<double>(static_cast<std::int64_t>(*v)))
      fail(key, "expected a list of integers, bad entry '" + part + "'");
    out.push_back(static_cast<std::int64_t>(*v));
  }
  return out;
}

Config Config::parse(std::istream& in, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::string current;
  cfg.sections_.emplace("", ConfigSection("", source));
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string text = raw;
    if (const auto hash = text.find_first_of("#;"); hash != std::string::npos) text.resize(hash);
    text = trim(text);
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(source, line, "", "unterminated section header");
      current = trim(std::string_view(text).substr(1, text.size() - 2));
      if (current.empty()) throw ConfigError(source, line, "", "empty section name");
      cfg.sections_.try_emplace(current, ConfigSection(current, source));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line, "", "expected 'key = value'");
    const std::string key = trim(std::string_view(text).substr(0, eq));
    if (key.empty()) throw ConfigError(source, line, "", "empty key");
    auto& section = cfg.sections_.at(current);
    if (section.has(key)) throw ConfigError(source, line, current.empty() ? key : current + "." + key, "duplicate key");
    section.set(key, trim(std::string_view(text).substr(eq + 1)), line);
  }
  return cfg;
}

Config Config::parse_string(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  return parse(in, source);
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "", "cannot open config file");
  return parse(in, path);
}

bool Config::has_section(std::string_view name) const { return sections_.find(name) != sections_.end(); }

const ConfigSection& Config::section(std::string_view name) const {
  static const ConfigSection empty;
  const auto it = sections_.find(name);
  return it == sections_.end() ? empty : it->second;
}

ConfigSection& Config::mutable_section(const std::string& name) {
  return sections_.try_emplace(name, ConfigSection(name, source_)).first->second;
}

}  // namespace misspec
