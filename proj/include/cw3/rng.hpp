#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace cw3 {

// Counter-style seed mixing. Streams are derived from (root seed, purpose tag,
// counters) so that any consumer can be re-created mid-run from plain integers
// and results do not depend on draw order elsewhere in the program.
inline uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_stream(uint64_t root, std::string_view tag, uint64_t a = 0,
                           uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = root;
  splitmix64_next(s);
  for (char ch : tag) {
    s ^= static_cast<uint64_t>(static_cast<unsigned char>(ch));
    splitmix64_next(s);
  }
  s ^= a;
  splitmix64_next(s);
  s ^= b;
  splitmix64_next(s);
  s ^= c;
  return splitmix64_next(s);
}

// Deterministic generator with hand-rolled distributions. The standard
// distribution objects are implementation-defined, so all mapping from raw
// bits to samples lives here and is identical on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    for (int i = 0; i < 4; ++i) splitmix64_next(state_);
  }

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Inclusive bounds.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller with the cosine/sine pair cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cw3
