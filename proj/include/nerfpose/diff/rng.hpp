#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nerfpose::diff {

/// Stateless 64-bit mixer. Used to derive independent per-item streams
/// (per pixel, per epoch) from one seed so results do not depend on
/// thread scheduling or iteration order.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) { return splitmix64(seed ^ splitmix64(v)); }

/// Deterministic RNG with explicitly implemented distributions, so sampled
/// sequences are identical across standard-library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int64_t index(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Fork an independent stream keyed by `key`.
  Rng fork(uint64_t key) const { return Rng(hash_combine(state_seed_view(), key)); }

 private:
  uint64_t state_seed_view() const {
    // mt19937_64 state is not cheaply serializable; fork from a copy's output.
    std::mt19937_64 copy = gen_;
    return copy();
  }

  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace nerfpose::diff
