#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace degmon {

using Rng = std::mt19937_64;

/// splitmix64 finaliser.
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a over bytes; stable across platforms.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b);

/// Per-image seed: stable hash of (master_seed, image_id, epoch, view_index).
std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view image_id, std::uint64_t epoch,
                          std::uint64_t view_index);

double uniform(Rng& rng, double lo, double hi);

/// Standard normal variate (Box-Muller, no cached state).
double standard_normal(Rng& rng);

/// Poisson variate; exact multiplication method below mean 64, rounded
/// normal approximation above.
long poisson(Rng& rng, double mean);

}  // namespace degmon
