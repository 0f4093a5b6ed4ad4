#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace vremd {

// Deterministic random source. All draws go through explicit transforms of
// mt19937_64 output so sequences are reproducible and serializable as text.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  int uniform_int(int lo, int hi) {  // inclusive range
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(gen_() % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller; the second variate of each pair is discarded so the draw
  // count per call is fixed.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double z = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * 3.14159265358979323846 * u2);
    return mean + stddev * z;
  }

  // Resamples until within +-2 stddev of the mean.
  double trunc_normal(double stddev) {
    while (true) {
      const double z = normal(0.0, stddev);
      if (std::abs(z) <= 2.0 * stddev) return z;
    }
  }

  // Independent stream derived from this seed and a stream index (splitmix64).
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return Rng(x);
  }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace vremd
