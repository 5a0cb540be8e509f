#include "semlink/rng.hpp"

#include <cmath>

namespace semlink {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) {
  return mix64(seed ^ mix64(a + kGolden));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

std::uint64_t CounterRng::next_u64() {
  return mix64(seed_ + (counter_++) * kGolden);
}

double CounterRng::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::next_gauss() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 shifted away from 0 so log() stays finite.
  double u1 = next_unit();
  double u2 = next_unit();
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::complex<double> CounterRng::next_cgauss(double variance) {
  double s = std::sqrt(variance * 0.5);
  double u1 = next_unit();
  double u2 = next_unit();
  double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  double theta = 2.0 * M_PI * u2;
  return {s * r * std::cos(theta), s * r * std::sin(theta)};
}

}  // namespace semlink
