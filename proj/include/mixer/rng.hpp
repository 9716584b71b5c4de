#pragma once

// Seed-reproducible PRNG used for all initialization, sampling and shuffling.
// xoshiro256++ seeded through splitmix64; uniform doubles take the top 53 bits,
// so a given seed produces bitwise-identical streams on any conforming platform
// (std::uniform_real_distribution makes no such promise).

#include <cstdint>
#include <vector>

namespace mixer {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n), unbiased via rejection
  int uniform_int(int n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t bound = ~std::uint64_t{0} - ~std::uint64_t{0} % un;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= bound);
    return static_cast<int>(r % un);
  }

  // Sample an index from a probability vector by CDF inversion.
  int categorical(const std::vector<double>& p) {
    const double u = uniform01();
    double cum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      cum += p[i];
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;  // fp slack
  }

  // Deterministic stream splitting (per-example, per-epoch seeds).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    std::uint64_t s = a;
    std::uint64_t h = splitmix64(s);
    s = h ^ (b + 0x9e3779b97f4a7c15ULL);
    h = splitmix64(s);
    s = h ^ (c + 0xbf58476d1ce4e5b9ULL);
    return splitmix64(s);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

// Fisher-Yates, driven by the caller's Rng for reproducibility.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace mixer
