#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string_view>

namespace patchforge {

// Counter-based SplitMix64 stream.
//
// Draw i of a stream with key k is mix(k + (i + 1) * kGamma), where mix is the
// SplitMix64 finalizer (Steele, Lea & Flood 2014). Output depends only on
// (key, counter), so streams are reproducible on every platform and can be
// skipped ahead in O(1). Integer and real draws are derived with fixed
// algorithms instead of <random> distributions, whose output is
// implementation-defined.
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kMul1 = 0xBF58476D1CE4E5B9ULL;
  static constexpr std::uint64_t kMul2 = 0x94D049BB133111EBULL;

  explicit CounterRng(std::uint64_t key = 0, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * kMul1;
    z = (z ^ (z >> 27)) * kMul2;
    return z ^ (z >> 31);
  }

  // Independent substream for a named purpose ("slide", "coords", ...).
  static CounterRng substream(std::uint64_t seed, std::string_view purpose) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a offset basis
    for (char c : purpose) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    return CounterRng(mix(seed ^ mix(h)));
  }

  std::uint64_t next() {
    ++counter_;
    return mix(key_ + counter_ * kGamma);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) {
      return 0;
    }
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
      if (static_cast<std::uint64_t>(m) >= threshold) {
        return static_cast<std::uint64_t>(m >> 64);
      }
    }
  }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Index drawn proportionally to non-negative weights; weights must not all
  // be zero.
  std::size_t weighted(std::span<const double> weights);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      const auto j = static_cast<decltype(i)>(below(static_cast<std::uint64_t>(i) + 1));
      std::iter_swap(first + i, first + j);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Seed for worker shard `shard` of a stream seeded with `seed`.
inline std::uint64_t shard_seed(std::uint64_t seed, std::uint64_t shard) { return seed + shard; }

}  // namespace patchforge
