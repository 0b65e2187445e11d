#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace trunclab {

// Counter-based deterministic generator "tlrng-v1".
//
// Output i of a stream with key k is mix64(k + (i+1) * GOLDEN) where mix64 is
// the SplitMix64 finalizer. Streams are split by deriving a child key from the
// parent key and a label hash; child streams never share outputs with the
// parent. State is exactly (key, counter), so it serializes to two u64 and a
// restored generator continues the stream bit-for-bit. The full algorithm is
// documented in the README so the sequence can be reproduced independently.
class Rng {
 public:
  static constexpr const char* version() { return "tlrng-v1"; }

  struct raw_state_tag {};

  explicit Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)), counter_(0) {}
  Rng(std::uint64_t key, std::uint64_t counter, raw_state_tag)
      : key_(key), counter_(counter) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

  // Child stream for a named purpose; independent of the parent's counter.
  Rng split(std::string_view label) const {
    return Rng(derive(key_, fnv1a64(label)), 0, raw_state_tag{});
  }
  Rng split(std::uint64_t index) const {
    return Rng(derive(key_, mix64(index + kGolden)), 0, raw_state_tag{});
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via bitmask rejection.
  std::uint64_t uniform_int(std::uint64_t n);

  // Fisher-Yates, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t z);
  static std::uint64_t fnv1a64(std::string_view s);

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  static std::uint64_t derive(std::uint64_t key, std::uint64_t label_hash) {
    return mix64(key ^ (label_hash + kGolden));
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace trunclab
