// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/runner/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace icllab::runner {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <class T>
bool parse_int(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_real(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

std::size_t to_size(const std::string& s) {
  std::size_t v = 0;
  // Allow 2e4-style literals for step counts when they are exact integers.
  if (parse_int(s, v)) return v;
  double d = 0.0;
  if (parse_real(s, d) && d >= 0.0 && d <= 9.0e15 && static_cast<double>(static_cast<std::size_t>(d)) == d)
    return static_cast<std::size_t>(d);
  throw std::invalid_argument("non-negative integer");
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  if (!parse_int(s, v)) throw std::invalid_argument("unsigned 64-bit integer");
  return v;
}

double to_double(const std::string& s) {
  double v = 0.0;
  if (!parse_real(s, v)) throw std::invalid_argument("number");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("boolean (true/false)");
}

template <class T, class F>
std::vector<T> to_list(const std::string& s, F one) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(one(item));
  return out;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, std::size_t line, const std::string& msg)
    : Error(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + msg), line_(line) {}

Config Config::parse(const std::string& text, std::string source) {
  Config c;
  c.text_ = text;
  c.source_ = std::move(source);
  std::istringstream is(text);
  std::string raw, section;
  std::size_t line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(std::string_view(raw).substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(c.source_, line, "malformed section header '" + s + "'");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      if (section.empty()) throw ConfigError(c.source_, line, "empty section name");
      if (c.section_lines_.count(section)) throw ConfigError(c.source_, line, "duplicate section [" + section + "]");
      c.section_lines_[section] = line;
      c.sections_[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(c.source_, line, "expected 'key = value', got '" + s + "'");
    if (section.empty()) throw ConfigError(c.source_, line, "key outside any [section]");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    const std::string value = trim(std::string_view(s).substr(eq + 1));
    if (key.empty()) throw ConfigError(c.source_, line, "empty key");
    auto& sec = c.sections_[section];
    if (sec.count(key)) throw ConfigError(c.source_, line, "duplicate key '" + key + "' in [" + section + "]");
    sec[key] = Entry{value, line, false};
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

const Config::Entry* Config::find(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

bool Config::has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

std::size_t Config::line_of(const std::string& section, const std::string& key) const {
  const Entry* e = find(section, key);
  return e ? e->line : 0;
}

void Config::fail(const std::string& section, const std::string& key, const std::string& msg) const {
  throw ConfigError(source_, line_of(section, key), "[" + section + "] " + key + ": " + msg);
}

template <class T, class Parse>
T Config::get(const std::string& section, const std::string& key, std::optional<T> fallback, Parse parse,
              const char* what) {
  const Entry* e = find(section, key);
  if (!e) {
    if (fallback) return *fallback;
    throw ConfigError(source_, 0, "missing required key '" + key + "' in [" + section + "]");
  }
  e->used = true;
  try {
    return parse(e->value);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(source_, e->line,
                      "[" + section + "] " + key + ": expected " + (what ? what : ex.what()) + ", got '" + e->value +
                          "'");
  }
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               std::optional<std::string> fallback) {
  return get<std::string>(section, key, std::move(fallback), [](const std::string& s) { return s; }, "string");
}

std::size_t Config::get_size(const std::string& section, const std::string& key, std::optional<std::size_t> fallback) {
  return get<std::size_t>(section, key, fallback, to_size, "non-negative integer");
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::optional<std::uint64_t> fallback) {
  return get<std::uint64_t>(section, key, fallback, to_u64, "unsigned integer");
}

double Config::get_double(const std::string& section, const std::string& key, std::optional<double> fallback) {
  return get<double>(section, key, fallback, to_double, "number");
}

bool Config::get_bool(const std::string& section, const std::string& key, std::optional<bool> fallback) {
  return get<bool>(section, key, fallback, to_bool, "boolean (true/false)");
}

std::vector<std::string> Config::get_strings(const std::string& section, const std::string& key,
                                             std::optional<std::vector<std::string>> fallback) {
  return get<std::vector<std::string>>(section, key, std::move(fallback), split_list, "list");
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key,
                                        std::optional<std::vector<double>> fallback) {
  return get<std::vector<double>>(
      section, key, std::move(fallback), [](const std::string& s) { return to_list<double>(s, to_double); },
      "list of numbers");
}

std::vector<std::size_t> Config::get_sizes(const std::string& section, const std::string& key,
                                           std::optional<std::vector<std::size_t>> fallback) {
  return get<std::vector<std::size_t>>(
      section, key, std::move(fallback), [](const std::string& s) { return to_list<std::size_t>(s, to_size); },
      "list of non-negative integers");
}

std::vector<std::uint64_t> Config::get_u64s(const std::string& section, const std::string& key,
                                            std::optional<std::vector<std::uint64_t>> fallback) {
  return get<std::vector<std::uint64_t>>(
      section, key, std::move(fallback), [](const std::string& s) { return to_list<std::uint64_t>(s, to_u64); },
      "list of unsigned integers");
}

void Config::finish() const {
  // Report in line order so the first problem in the file comes first.
  std::size_t best_line = 0;
  std::string msg;
  for (const auto& [sec, keys] : sections_) {
    for (const auto& [key, e] : keys) {
      if (!e.used && (best_line == 0 || e.line < best_line)) {
        best_line = e.line;
        msg = "unknown key '" + key + "' in [" + sec + "]";
      }
    }
  }
  if (best_line) throw ConfigError(source_, best_line, msg);
}

}  // namespace icllab::runner
