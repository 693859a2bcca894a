#include "maris/random.hpp"

#include <cmath>
#include <numbers>

namespace maris {

std::uint64_t fnv1a(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::string_view stream) {
  return std::mt19937_64(mix64(seed ^ mix64(fnv1a(stream))));
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  if (n == 0) return 0;
  // Rejection sampling for an unbiased draw.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  // Box-Muller on raw engine output keeps draws identical across standard libraries.
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); i += 2) {
    double u1 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    m[i] = stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < m.size()) m[i + 1] = stddev * r * std::sin(2.0 * std::numbers::pi * u2);
  }
  return m;
}

}  // namespace maris
