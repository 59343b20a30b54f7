#include "latune/design.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace latune {

Eigen::MatrixXd latin_hypercube(std::size_t n, std::size_t dim, Rng& rng) {
    Eigen::MatrixXd out(n, dim);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < dim; ++j) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < n; ++i) {
            out(i, j) = (static_cast<double>(perm[i]) + unif(rng)) / static_cast<double>(n);
        }
    }
    return out;
}

Eigen::MatrixXd uniform_points(std::size_t n, std::size_t dim, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd out(n, dim);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            out(i, j) = unif(rng);
        }
    }
    return out;
}

Eigen::MatrixXd standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            out(i, j) = normal(rng);
        }
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace latune
