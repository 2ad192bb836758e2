#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace phswarm {

// Deterministic RNG with a portable uint64 -> double mapping, so the same
// seed yields bitwise-identical streams on every platform. Distributions in
// <random> are implementation-defined, which would break reproducibility of
// datasets and parameter initialization.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Derive an independent child stream (e.g. one per trajectory).
  Rng child(std::uint64_t index) const {
    return Rng(seed_ ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

// FNV-1a, used to stamp outputs with a hash of the generating configuration.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v);

}  // namespace phswarm
