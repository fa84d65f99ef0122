// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icllab/errors.hpp"

namespace icllab::runner {

/// Invalid configuration. `line` is 1-based, 0 when the problem is a
/// missing key rather than a particular line.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& msg);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Flat `key = value` text with `[section]` headers and `#` comments.
/// Every key must be read through a getter before finish(); anything left
/// over is reported as unknown.
class Config {
 public:
  static Config parse(const std::string& text, std::string source = "<config>");
  static Config load(const std::string& path);

  const std::string& text() const noexcept { return text_; }
  const std::string& source() const noexcept { return source_; }

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         std::optional<std::string> fallback = std::nullopt);
  std::size_t get_size(const std::string& section, const std::string& key,
                       std::optional<std::size_t> fallback = std::nullopt);
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::optional<std::uint64_t> fallback = std::nullopt);
  double get_double(const std::string& section, const std::string& key, std::optional<double> fallback = std::nullopt);
  bool get_bool(const std::string& section, const std::string& key, std::optional<bool> fallback = std::nullopt);
  /// Comma-separated lists.
  std::vector<std::string> get_strings(const std::string& section, const std::string& key,
                                       std::optional<std::vector<std::string>> fallback = std::nullopt);
  std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                  std::optional<std::vector<double>> fallback = std::nullopt);
  std::vector<std::size_t> get_sizes(const std::string& section, const std::string& key,
                                     std::optional<std::vector<std::size_t>> fallback = std::nullopt);
  std::vector<std::uint64_t> get_u64s(const std::string& section, const std::string& key,
                                      std::optional<std::vector<std::uint64_t>> fallback = std::nullopt);

  /// Line of a key (0 if absent), for errors raised after parsing.
  std::size_t line_of(const std::string& section, const std::string& key) const;
  [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& msg) const;

  /// Throws ConfigError on the first key or section no getter consumed.
  void finish() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    mutable bool used = false;
  };
  const Entry* find(const std::string& section, const std::string& key) const;
  template <class T, class Parse>
  T get(const std::string& section, const std::string& key, std::optional<T> fallback, Parse parse,
        const char* what);

  std::string text_;
  std::string source_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, std::size_t> section_lines_;
};

}  // namespace icllab::runner
