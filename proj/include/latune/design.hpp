#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace latune {

using Rng = std::mt19937_64;

// Scrambled Latin-hypercube design in the unit box: `n` rows, `dim` columns.
// Every column has exactly one point in each of the `n` equal-width strata.
Eigen::MatrixXd latin_hypercube(std::size_t n, std::size_t dim, Rng& rng);

// Uniform points in the unit box, one per row.
Eigen::MatrixXd uniform_points(std::size_t n, std::size_t dim, Rng& rng);

// Standard-normal matrix.
Eigen::MatrixXd standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

// Derives an independent child seed; splitmix64 finalizer over (seed, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace latune
