#include "trunclab/rng.hpp"

#include "trunclab/errors.hpp"

namespace trunclab {

std::uint64_t Rng::mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

std::uint64_t Rng::fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw config_error("Rng::uniform_int: n must be positive");
  if (n == 1) return 0;
  std::uint64_t mask = ~0ull >> __builtin_clzll(n - 1);
  std::uint64_t v;
  do {
    v = next_u64() & mask;
  } while (v >= n);
  return v;
}

}  // namespace trunclab
