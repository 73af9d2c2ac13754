#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <random>

#include "pepnet/tensor.hpp"

namespace pepnet {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic random source. Transforms are hand-rolled on top of
// mt19937_64 so streams do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed), base_seed_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  uint64_t uniform_index(uint64_t n) {
    // rejection sampling keeps the draw unbiased
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent stream, e.g. per shard or per epoch.
  Rng fork(uint64_t salt) const { return Rng(splitmix64(base_seed_ ^ splitmix64(salt))); }

  std::mt19937_64& engine() { return eng_; }

  // Full-state round trip (engine + Box-Muller spare), text encoded.
  void save_state(std::ostream& os) const {
    os << base_seed_ << ' ' << (have_spare_ ? 1 : 0) << ' ' << std::bit_cast<uint64_t>(spare_)
       << ' ' << eng_ << '\n';
  }
  void load_state(std::istream& is) {
    int spare_flag = 0;
    uint64_t spare_bits = 0;
    is >> base_seed_ >> spare_flag >> spare_bits >> eng_;
    spare_ = std::bit_cast<double>(spare_bits);
    have_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 eng_;
  uint64_t base_seed_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Xavier-uniform fill: limit sqrt(6 / (fan_in + fan_out)).
inline void xavier_fill(Tensor& t, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
}

}  // namespace pepnet
