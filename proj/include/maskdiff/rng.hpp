#pragma once

#include <cstdint>
#include <string_view>

namespace maskdiff {

/// Counter-based random stream. Each draw is a pure function of
/// (key, counter), so a stream can be re-created from its seed and split
/// into named substreams without sharing state.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-counter/box-muller";

  explicit RngStream(uint64_t seed = 0);

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  RngStream substream(std::string_view name) const;
  RngStream substream(uint64_t index) const;

 private:
  uint64_t seed_;
  uint64_t key_;
  uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

uint64_t mix64(uint64_t x);
uint64_t fnv1a64(std::string_view bytes);

}  // namespace maskdiff
