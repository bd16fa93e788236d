// Copyright 2026 The diffbridge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace diffbridge {

/// Counter-based splittable generator built on the SplitMix64 finalizer.
///
/// Every stream is identified by a 64-bit key; `split(id)` derives an
/// independent child stream, so per-path and per-repetition streams depend
/// only on (seed, ids) and never on evaluation order.
class Rng {
 public:
  using result_type = std::uint64_t;

  static constexpr std::string_view kAlgorithm = "splitmix64-split";

  explicit Rng(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()();

  [[nodiscard]] Rng split(std::uint64_t id) const;

  /// Uniform on [0, 1).
  double uniform();
  double normal();
  double exponential(double rate);

  [[nodiscard]] std::uint64_t key() const { return key_; }

 private:
  Rng(std::uint64_t key, bool /*raw*/) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace diffbridge
