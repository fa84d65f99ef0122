// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace icllab {

/// Counter-based generator: draw i of a stream is a pure function of
/// (key, i), so streams can be derived per task / per prompt and evaluated
/// in any order.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(mix(key ^ 0x6a09e667f3bcc909ULL)) {}

  /// Child stream for (seed, tags...). Distinct tag tuples give independent streams.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);
  static std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);
  static std::uint64_t tag(std::string_view name);

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  /// Standard normal (Box-Muller, both outputs used).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t key() const noexcept { return key_; }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace icllab
