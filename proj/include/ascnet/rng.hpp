#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace ascnet {

/// SplitMix64 generator. Small state makes it cheap to seed one engine per
/// sinogram bin or per training sample (counter-based seeding).
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Derive a stream seed from a root seed and a sequence of counters.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = root;
  for (std::uint64_t k : keys) {
    SplitMix64 g(h ^ (k * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
    h = g();
  }
  return h;
}

/// Uniform double in [0, 1) with 53 random bits; libstdc++-independent.
inline double uniform01(SplitMix64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

}  // namespace ascnet
