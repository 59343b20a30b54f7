#include "latune/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "latune/design.hpp"
#include "latune/errors.hpp"

namespace latune {

namespace {

constexpr double kSqrt5 = 2.23606797749978969640917366873128;
const double kLog2Pi = std::log(2.0 * M_PI);

Eigen::MatrixXd scale_columns(const Eigen::Ref<const Eigen::MatrixXd>& x,
                              const Eigen::VectorXd& lengthscales) {
    return x.array().rowwise() / lengthscales.transpose().array();
}

// Euclidean distances between rows of already-scaled inputs.
Eigen::MatrixXd scaled_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 bool same_set) {
    const Eigen::VectorXd na = a.rowwise().squaredNorm();
    const Eigen::VectorXd nb = b.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = -2.0 * a * b.transpose();
    d2.colwise() += na;
    d2.rowwise() += nb.transpose();
    d2 = d2.cwiseMax(0.0);
    if (same_set) {
        d2 = (0.5 * (d2 + d2.transpose())).eval();
        d2.diagonal().setZero();
    }
    return d2.cwiseSqrt();
}

Eigen::MatrixXd matern_from_distances(const Eigen::MatrixXd& r, double signal_variance) {
    const Eigen::ArrayXXd s5r = kSqrt5 * r.array();
    return (signal_variance * (1.0 + s5r + s5r.square() / 3.0) * (-s5r).exp()).matrix();
}

}  // namespace

KernelParams KernelParams::isotropic(std::size_t dim, double lengthscale, double signal_variance,
                                     double noise_variance) {
    KernelParams p;
    p.log_lengthscales =
        Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), std::log(lengthscale));
    p.log_signal_variance = std::log(signal_variance);
    p.log_noise_variance = std::log(noise_variance);
    return p;
}

double KernelParams::signal_variance() const { return std::exp(log_signal_variance); }
double KernelParams::noise_variance() const { return std::exp(log_noise_variance); }

void KernelParams::clamp() {
    log_lengthscales = log_lengthscales.cwiseMax(std::log(kMinLengthscale))
                           .cwiseMin(std::log(kMaxLengthscale));
    log_signal_variance = std::clamp(log_signal_variance, std::log(kMinSignalVariance),
                                     std::log(kMaxSignalVariance));
    log_noise_variance = std::clamp(log_noise_variance, std::log(kMinNoiseVariance),
                                    std::log(kMaxNoiseVariance));
}

Eigen::VectorXd KernelParams::to_vector() const {
    const Eigen::Index d = log_lengthscales.size();
    Eigen::VectorXd v(d + 2);
    v.head(d) = log_lengthscales;
    v(d) = log_signal_variance;
    v(d + 1) = log_noise_variance;
    return v;
}

KernelParams KernelParams::from_vector(const Eigen::VectorXd& v) {
    const Eigen::Index d = v.size() - 2;
    KernelParams p;
    p.log_lengthscales = v.head(d);
    p.log_signal_variance = v(d);
    p.log_noise_variance = v(d + 1);
    return p;
}

double matern52_correlation(double r) {
    const double s5r = kSqrt5 * r;
    return (1.0 + s5r + s5r * s5r / 3.0) * std::exp(-s5r);
}

double matern_kernel(const Eigen::Ref<const Eigen::VectorXd>& a,
                     const Eigen::Ref<const Eigen::VectorXd>& b, const KernelParams& params) {
    if (a.size() != b.size()) {
        throw DimensionMismatch(static_cast<std::size_t>(a.size()),
                                static_cast<std::size_t>(b.size()));
    }
    if (static_cast<std::size_t>(a.size()) != params.dim()) {
        throw DimensionMismatch(params.dim(), static_cast<std::size_t>(a.size()));
    }
    const double r = ((a - b).array() / params.lengthscales().array()).matrix().norm();
    return params.signal_variance() * matern52_correlation(r);
}

Eigen::MatrixXd kernel_matrix(const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b,
                              const KernelParams& params) {
    if (a.cols() != b.cols()) {
        throw DimensionMismatch(static_cast<std::size_t>(a.cols()),
                                static_cast<std::size_t>(b.cols()));
    }
    if (static_cast<std::size_t>(a.cols()) != params.dim()) {
        throw DimensionMismatch(params.dim(), static_cast<std::size_t>(a.cols()));
    }
    const Eigen::VectorXd ls = params.lengthscales();
    const bool same = a.data() == b.data() && a.rows() == b.rows();
    return matern_from_distances(scaled_distances(scale_columns(a, ls), scale_columns(b, ls), same),
                                 params.signal_variance());
}

Eigen::LLT<Eigen::MatrixXd> jittered_cholesky(const Eigen::MatrixXd& k, double* jitter_used) {
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() == Eigen::Success) {
        if (jitter_used) {
            *jitter_used = 0.0;
        }
        return llt;
    }
    for (double jitter = 1e-10; jitter <= 1e-4 * 1.0000001; jitter *= 10.0) {
        Eigen::MatrixXd kj = k;
        kj.diagonal().array() += jitter;
        llt.compute(kj);
        if (llt.info() == Eigen::Success) {
            if (jitter_used) {
                *jitter_used = jitter;
            }
            return llt;
        }
    }
    throw CholeskyFailure("Cholesky failed after jitter 1e-4");
}

LogMarginalLikelihood log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                              const KernelParams& params) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (static_cast<std::size_t>(d) != params.dim()) {
        throw DimensionMismatch(params.dim(), static_cast<std::size_t>(d));
    }
    if (y.size() != n) {
        throw DimensionMismatch(static_cast<std::size_t>(n), static_cast<std::size_t>(y.size()));
    }
    const double sf2 = params.signal_variance();
    const double sn2 = params.noise_variance();
    const Eigen::MatrixXd xs = scale_columns(x, params.lengthscales());
    const Eigen::MatrixXd r = scaled_distances(xs, xs, true);
    const Eigen::ArrayXXd s5r = kSqrt5 * r.array();
    const Eigen::ArrayXXd e = (-s5r).exp();
    const Eigen::MatrixXd kf = (sf2 * (1.0 + s5r + s5r.square() / 3.0) * e).matrix();
    Eigen::MatrixXd k = kf;
    k.diagonal().array() += sn2;

    const auto llt = jittered_cholesky(k);
    const Eigen::VectorXd alpha = llt.solve(y);
    const Eigen::MatrixXd l = llt.matrixL();

    LogMarginalLikelihood out;
    out.value = -0.5 * y.dot(alpha) - l.diagonal().array().log().sum() -
                0.5 * static_cast<double>(n) * kLog2Pi;

    const Eigen::MatrixXd k_inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd w = alpha * alpha.transpose() - k_inv;

    out.gradient.resize(d + 2);
    out.gradient(d) = 0.5 * (w.array() * kf.array()).sum();
    out.gradient(d + 1) = 0.5 * sn2 * w.trace();

    // dk/dlog(l_k) = sf2 * 5/3 * (1 + sqrt5 r) exp(-sqrt5 r) * ((a_k - b_k) / l_k)^2
    const Eigen::MatrixXd s = (w.array() * (sf2 * 5.0 / 3.0) * (1.0 + s5r) * e).matrix();
    const Eigen::VectorXd row_sums = s.rowwise().sum();
    const Eigen::MatrixXd sx = s * xs;
    out.gradient.head(d) = (xs.array().square().colwise() * row_sums.array()).colwise().sum().transpose() -
                           (xs.array() * sx.array()).colwise().sum().transpose();
    return out;
}

GpModel GpModel::prepare(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() < 1) {
        throw InsufficientData("GP needs at least one training point");
    }
    if (y.size() != x.rows()) {
        throw DimensionMismatch(static_cast<std::size_t>(x.rows()),
                                static_cast<std::size_t>(y.size()));
    }
    // Canonical lexicographic row order makes the model independent of the
    // order the data arrived in, and puts duplicates next to each other.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    auto row_less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (x(a, j) != x(b, j)) {
                return x(a, j) < x(b, j);
            }
        }
        return false;
    };
    std::stable_sort(order.begin(), order.end(), row_less);

    std::vector<Eigen::Index> firsts;
    std::vector<double> sums;
    std::vector<int> counts;
    for (Eigen::Index idx : order) {
        if (!firsts.empty() && !row_less(firsts.back(), idx) && !row_less(idx, firsts.back())) {
            sums.back() += y(idx);
            counts.back() += 1;
        } else {
            firsts.push_back(idx);
            sums.push_back(y(idx));
            counts.push_back(1);
        }
    }

    GpModel m;
    const auto n = static_cast<Eigen::Index>(firsts.size());
    m.x_.resize(n, x.cols());
    Eigen::VectorXd targets(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        m.x_.row(i) = x.row(firsts[static_cast<std::size_t>(i)]);
        targets(i) = sums[static_cast<std::size_t>(i)] / counts[static_cast<std::size_t>(i)];
    }
    m.y_mean_ = targets.mean();
    const double var = (targets.array() - m.y_mean_).square().mean();
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(m.y_mean_)))) {
        m.degenerate_ = true;
        m.y_std_ = 1.0;
    } else {
        m.y_std_ = sd;
    }
    m.y_ = (targets.array() - m.y_mean_) / m.y_std_;
    return m;
}

void GpModel::factorize() {
    Eigen::MatrixXd k = kernel_matrix(x_, x_, params_);
    k.diagonal().array() += params_.noise_variance();
    const auto llt = jittered_cholesky(k);
    chol_ = llt.matrixL();
    alpha_ = llt.solve(y_);
    lml_ = -0.5 * y_.dot(alpha_) - chol_.diagonal().array().log().sum() -
           0.5 * static_cast<double>(y_.size()) * kLog2Pi;
}

GpModel GpModel::condition(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           const KernelParams& params) {
    GpModel m = prepare(x, y);
    if (params.dim() != m.dim()) {
        throw DimensionMismatch(m.dim(), params.dim());
    }
    m.params_ = params;
    m.factorize();
    return m;
}

GpModel GpModel::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& init,
                     const GpFitConfig& config) {
    GpModel m = prepare(x, y);
    if (init.dim() != m.dim()) {
        throw DimensionMismatch(m.dim(), init.dim());
    }
    KernelParams start = init;
    start.clamp();
    if (m.size() == 1) {
        m.params_ = start;
        m.factorize();
        return m;
    }

    Rng rng(config.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<KernelParams> starts{start};
    for (int s = 0; s < config.restarts; ++s) {
        KernelParams p = start;
        for (Eigen::Index i = 0; i < p.log_lengthscales.size(); ++i) {
            p.log_lengthscales(i) = std::log(0.05) + unif(rng) * (std::log(2.0) - std::log(0.05));
        }
        p.log_signal_variance = std::log(0.5) + unif(rng) * (std::log(2.0) - std::log(0.5));
        p.log_noise_variance = std::log(1e-6) + unif(rng) * (std::log(1e-2) - std::log(1e-6));
        starts.push_back(p);
    }

    std::optional<KernelParams> best;
    double best_value = -std::numeric_limits<double>::infinity();
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    for (const auto& s0 : starts) {
        Eigen::VectorXd p = s0.to_vector();
        Eigen::VectorXd m1 = Eigen::VectorXd::Zero(p.size());
        Eigen::VectorXd m2 = Eigen::VectorXd::Zero(p.size());
        for (int it = 0; it <= config.iterations; ++it) {
            LogMarginalLikelihood lml;
            try {
                lml = latune::log_marginal_likelihood(m.x_, m.y_, KernelParams::from_vector(p));
            } catch (const CholeskyFailure&) {
                break;
            }
            if (!std::isfinite(lml.value) || !lml.gradient.allFinite()) {
                break;
            }
            if (lml.value > best_value) {
                best_value = lml.value;
                best = KernelParams::from_vector(p);
            }
            if (it == config.iterations) {
                break;
            }
            const double t = it + 1;
            m1 = kBeta1 * m1 + (1.0 - kBeta1) * lml.gradient;
            m2 = kBeta2 * m2 + (1.0 - kBeta2) * lml.gradient.cwiseAbs2();
            const Eigen::VectorXd m1_hat = m1 / (1.0 - std::pow(kBeta1, t));
            const Eigen::VectorXd m2_hat = m2 / (1.0 - std::pow(kBeta2, t));
            p += config.learning_rate * (m1_hat.array() / (m2_hat.array().sqrt() + kEps)).matrix();
            KernelParams clamped = KernelParams::from_vector(p);
            clamped.clamp();
            p = clamped.to_vector();
        }
    }
    if (!best) {
        throw CholeskyFailure("no hyperparameter start produced a factorizable kernel matrix");
    }
    m.params_ = *best;
    m.factorize();
    return m;
}

GpPrediction GpModel::predict(const Eigen::MatrixXd& xq) const {
    if (static_cast<std::size_t>(xq.cols()) != dim()) {
        throw DimensionMismatch(dim(), static_cast<std::size_t>(xq.cols()));
    }
    const Eigen::MatrixXd ks = kernel_matrix(xq, x_, params_);
    const Eigen::MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(ks.transpose());
    GpPrediction out;
    out.mean = (ks * alpha_).array() * y_std_ + y_mean_;
    const Eigen::ArrayXd var =
        (params_.signal_variance() - v.colwise().squaredNorm().transpose().array()).cwiseMax(0.0);
    out.std = var.sqrt() * y_std_;
    return out;
}

Eigen::MatrixXd GpModel::sample_posterior(const Eigen::MatrixXd& xq, std::uint64_t seed,
                                          std::size_t count) const {
    if (count < 1) {
        throw InvalidConfig("sample_posterior needs count >= 1");
    }
    if (static_cast<std::size_t>(xq.cols()) != dim()) {
        throw DimensionMismatch(dim(), static_cast<std::size_t>(xq.cols()));
    }
    const Eigen::MatrixXd ks = kernel_matrix(xq, x_, params_);
    const Eigen::MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(ks.transpose());
    const Eigen::VectorXd mean = ks * alpha_;
    Eigen::MatrixXd cov = kernel_matrix(xq, xq, params_);
    cov.noalias() -= v.transpose() * v;
    cov = 0.5 * (cov + cov.transpose());
    const auto llt = jittered_cholesky(cov);

    Rng rng(seed);
    const Eigen::MatrixXd z = standard_normal(static_cast<std::size_t>(xq.rows()), count, rng);
    Eigen::MatrixXd draws = llt.matrixL() * z;
    draws.colwise() += mean;
    return ((draws.array() * y_std_ + y_mean_).matrix()).transpose();
}

}  // namespace latune
