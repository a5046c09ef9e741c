#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mfh {

// Deterministic seeded randomness. All draws go through mt19937_64 with the
// bit mapping below, so streams are identical across platforms and runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0,1), 53-bit mantissa
  double next_unit() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + next_unit() * (hi - lo); }

 private:
  std::mt19937_64 gen_;
};

// Derives an independent stream seed from a base seed and a stream name
// (FNV-1a over the name, finalized with a splitmix64 round).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view name) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace mfh
