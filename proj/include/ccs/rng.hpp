#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace ccs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// splitmix64 finalizer; a bijective mix of 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based sub-seed: the stream for (master, index) is a pure function
/// of both, so draw i gets the same randomness no matter which worker runs it.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(master, a), b);
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

inline Vector standard_normal(Rng& rng, Eigen::Index d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace ccs
