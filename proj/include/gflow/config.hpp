#pragma once

// Sectioned key-value experiment configs.
//
//   # comment (also ';')
//   [section]
//   key = value            lists: value, value, ...
//
// Keys are lower-case identifiers, unique within a section. Every key must
// be consumed by the experiment that reads the file; leftovers are errors.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gflow::lab {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, int line, const std::string& what)
      : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct ConfigEntry {
  std::string value;
  int line = 0;
};

class ConfigDocument {
 public:
  static ConfigDocument parse(std::istream& is, std::string source = "<config>") {
    ConfigDocument doc;
    doc.source_ = std::move(source);
    std::string raw, section;
    int line = 0;
    while (std::getline(is, raw)) {
      ++line;
      const std::string text = trim(strip_comment(raw));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']') throw ConfigError(doc.source_, line, "unterminated section header");
        section = trim(text.substr(1, text.size() - 2));
        if (!is_identifier(section)) throw ConfigError(doc.source_, line, "bad section name '" + section + "'");
        if (doc.sections_.count(section)) throw ConfigError(doc.source_, line, "duplicate section [" + section + "]");
        doc.sections_[section];
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw ConfigError(doc.source_, line, "expected 'key = value'");
      if (section.empty()) throw ConfigError(doc.source_, line, "key outside any section");
      const std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      if (!is_identifier(key)) throw ConfigError(doc.source_, line, "bad key '" + key + "'");
      if (value.empty()) throw ConfigError(doc.source_, line, "empty value for '" + key + "'");
      auto& sec = doc.sections_[section];
      if (sec.count(key))
        throw ConfigError(doc.source_, line,
                          "duplicate key '" + key + "' (first at line " + std::to_string(sec[key].line) + ")");
      sec[key] = {value, line};
    }
    return doc;
  }

  static ConfigDocument load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), 0, "cannot open config");
    return parse(in, path.string());
  }

  const std::string& source() const { return source_; }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key);
  }

  /// Marks the entry consumed.
  std::optional<ConfigEntry> take(const std::string& section, const std::string& key) {
    auto s = sections_.find(section);
    if (s == sections_.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    used_.insert(section + "." + key);
    return k->second;
  }

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) {
    const auto e = take(section, key);
    return e ? e->value : fallback;
  }

  double get_double(const std::string& section, const std::string& key, double fallback) {
    const auto e = take(section, key);
    return e ? to_double(*e, section + "." + key) : fallback;
  }

  /// Strictly positive real.
  double get_positive(const std::string& section, const std::string& key, double fallback) {
    const auto e = take(section, key);
    if (!e) return fallback;
    const double v = to_double(*e, section + "." + key);
    if (!(v > 0.0)) throw ConfigError(source_, e->line, section + "." + key + " must be positive");
    return v;
  }

  long long get_int(const std::string& section, const std::string& key, long long fallback, long long min_value) {
    const auto e = take(section, key);
    if (!e) return fallback;
    const long long v = to_int(*e, e->value, section + "." + key);
    if (v < min_value)
      throw ConfigError(source_, e->line, section + "." + key + " must be >= " + std::to_string(min_value));
    return v;
  }

  bool get_bool(const std::string& section, const std::string& key, bool fallback) {
    const auto e = take(section, key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "yes" || e->value == "1") return true;
    if (e->value == "false" || e->value == "no" || e->value == "0") return false;
    throw ConfigError(source_, e->line, section + "." + key + ": expected true or false");
  }

  std::vector<double> get_doubles(const std::string& section, const std::string& key, std::vector<double> fallback) {
    const auto e = take(section, key);
    if (!e) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(e->value)) out.push_back(to_double({item, e->line}, section + "." + key));
    return out;
  }

  std::vector<long long> get_ints(const std::string& section, const std::string& key, std::vector<long long> fallback,
                                  long long min_value) {
    const auto e = take(section, key);
    if (!e) return fallback;
    std::vector<long long> out;
    for (const auto& item : split_list(e->value)) {
      const long long v = to_int(*e, item, section + "." + key);
      if (v < min_value)
        throw ConfigError(source_, e->line, section + "." + key + " entries must be >= " + std::to_string(min_value));
      out.push_back(v);
    }
    return out;
  }

  /// Line of the entry, or 0 when absent.
  int line_of(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return 0;
    auto k = s->second.find(key);
    return k == s->second.end() ? 0 : k->second.line;
  }

  /// Throws on the first entry nobody consumed.
  void reject_unused() const {
    const ConfigEntry* first = nullptr;
    std::string name;
    for (const auto& [sec, keys] : sections_)
      for (const auto& [key, e] : keys)
        if (!used_.count(sec + "." + key) && (!first || e.line < first->line)) {
          first = &e;
          name = sec + "." + key;
        }
    if (first) throw ConfigError(source_, first->line, "unknown key " + name);
  }

  /// Lets a caller set an entry (command-line overrides).
  void set(const std::string& section, const std::string& key, const std::string& value) {
    auto& e = sections_[section][key];
    e.value = value;
  }

 private:
  static std::string strip_comment(const std::string& s) {
    const auto p = s.find_first_of("#;");
    return p == std::string::npos ? s : s.substr(0, p);
  }
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  static bool is_identifier(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; });
  }
  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
  }
  double to_double(const ConfigEntry& e, const std::string& name) const {
    const std::string& v = e.value;
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
      throw ConfigError(source_, e.line, name + ": '" + v + "' is not a finite number");
    return out;
  }
  long long to_int(const ConfigEntry& e, const std::string& v, const std::string& name) const {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
      throw ConfigError(source_, e.line, name + ": '" + v + "' is not an integer");
    return out;
  }

  std::string source_;
  std::map<std::string, std::map<std::string, ConfigEntry>> sections_;
  std::set<std::string> used_;
};

}  // namespace gflow::lab
