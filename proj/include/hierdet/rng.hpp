#pragma once

#include <cmath>
#include <cstdint>

namespace hierdet {

// Deterministic splitmix64 generator. Hand-rolled so that seeded runs are
// reproducible across standard libraries and platforms; std::*_distribution
// is implementation-defined and would break the byte-identical-rerun
// contract if the toolchain ever changes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() %
                                 static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Standard normal via Box-Muller; two fresh uniforms per draw.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Derive an independent stream, e.g. one per training step.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
};

}  // namespace hierdet
