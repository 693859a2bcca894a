#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "maris/tensor.hpp"

namespace maris {

std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// splitmix64 finalizer; used to combine seeds with stream identifiers.
std::uint64_t mix64(std::uint64_t x);

/// Generator for a named stream derived from a run seed. Every random draw in
/// the library goes through one of these, so no global state is involved.
std::mt19937_64 stream_rng(std::uint64_t seed, std::string_view stream);

Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);

/// Uniform integer in [0, n) from raw engine output (portable across standard libraries).
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);
/// Uniform double in [0, 1) from raw engine output.
double uniform01(std::mt19937_64& rng);

}  // namespace maris
