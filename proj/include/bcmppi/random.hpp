// Seeded, splittable random streams. Every consumer derives its own substream from
// a (seed, id, id, ...) path, so draws never depend on evaluation order.
#pragma once

#include <cstdint>
#include <random>

namespace bcmppi {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : key_(splitmix64(seed)) {}

  RandomStream child(std::uint64_t id) const {
    RandomStream s(0);
    s.key_ = splitmix64(key_ ^ splitmix64(id + 0x632BE59BD9B4E019ull));
    return s;
  }

  std::mt19937_64 engine() const { return std::mt19937_64(key_); }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

/// Uniform double in [0, 1) built from the top 53 bits, identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// lo + (hi - lo) * u; returns lo exactly when the range is empty.
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

}  // namespace bcmppi
