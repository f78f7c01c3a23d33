#pragma once

#include <cstdint>
#include <string_view>

namespace embfat {

// SplitMix64 generator. Used everywhere instead of <random> distributions so
// that streams are bit-reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is irrelevant at the sizes used here.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// FNV-1a over a label string, folded with up to two integer tags. All
// subsystem seeds are derived from the single run seed through this.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ root;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  auto mix = [](std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
  };
  h = mix(h ^ mix(a + 0x9e3779b97f4a7c15ULL));
  h = mix(h ^ mix(b + 0x3c6ef372fe94f82aULL));
  return h;
}

}  // namespace embfat
