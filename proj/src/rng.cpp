#include "mptlml/rng.hpp"

#include <cmath>
#include <numbers>

namespace mptlml {

std::uint64_t Stream::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = (*this)();
    if (r >= threshold) return r % n;
  }
}

double Stream::normal() {
  // Box-Muller; the sine branch is discarded so every normal consumes exactly
  // two counter positions.
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mptlml
