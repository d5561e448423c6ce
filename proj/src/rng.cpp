#include "degmon/rng.hpp"

#include <cmath>
#include <numbers>

namespace degmon {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL)); }

std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view image_id, std::uint64_t epoch,
                          std::uint64_t view_index) {
  std::uint64_t h = mix64(master_seed);
  h = combine_seed(h, fnv1a64(image_id));
  h = combine_seed(h, epoch);
  return combine_seed(h, view_index);
}

double uniform(Rng& rng, double lo, double hi) {
  // 53 random bits; avoids implementation-defined distribution objects.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double standard_normal(Rng& rng) {
  double u1 = uniform(rng, 0.0, 1.0);
  while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
  const double u2 = uniform(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

long poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  if (mean < 64.0) {
    const double limit = std::exp(-mean);
    long k = 0;
    double p = uniform(rng, 0.0, 1.0);
    while (p > limit) {
      ++k;
      p *= uniform(rng, 0.0, 1.0);
    }
    return k;
  }
  const double v = std::round(mean + std::sqrt(mean) * standard_normal(rng));
  return v < 0.0 ? 0 : static_cast<long>(v);
}

}  // namespace degmon
