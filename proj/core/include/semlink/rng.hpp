#pragma once

#include <complex>
#include <cstdint>

namespace semlink {

// Counter-based pseudo-random generator. Output i is a pure function of
// (seed, i): the stream is splitmix64's finalizer applied to seed + i*GOLDEN.
// This keeps every draw reproducible across platforms and compilers, which
// std::normal_distribution does not guarantee. The generator identity string
// is exported so result files can record how their noise was produced.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  static const char* identity() { return "splitmix64-counter/box-muller"; }

  std::uint64_t next_u64();

  // Uniform in [0,1), 53-bit mantissa.
  double next_unit();

  // Standard normal via Box-Muller (one value per pair of uniforms; the
  // second value is cached).
  double next_gauss();

  // Circularly-symmetric complex Gaussian with E|z|^2 = variance.
  std::complex<double> next_cgauss(double variance);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Avalanche mix of a single 64-bit word (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

// Documented seed-splitting rule: sub-streams for (image, trial, ...) derive
// from the experiment seed by folding each index through mix64.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

}  // namespace semlink
