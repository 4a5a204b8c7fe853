#include "semivit/rng.hpp"

namespace semivit {

double uniform01(Rng& rng) {
  // 53 random bits; avoids the implementation-defined generate_canonical path.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

}  // namespace semivit
