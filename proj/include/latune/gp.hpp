#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace latune {

// Hyperparameters of the ARD Matern-5/2 kernel, stored in log space.
struct KernelParams {
    static constexpr double kNu = 2.5;
    static constexpr double kMinLengthscale = 1e-3;
    static constexpr double kMaxLengthscale = 1e3;
    static constexpr double kMinSignalVariance = 0.05;
    static constexpr double kMaxSignalVariance = 20.0;
    static constexpr double kMinNoiseVariance = 1e-8;
    static constexpr double kMaxNoiseVariance = 0.2;

    Eigen::VectorXd log_lengthscales;
    double log_signal_variance = 0.0;
    double log_noise_variance = 0.0;

    static KernelParams isotropic(std::size_t dim, double lengthscale, double signal_variance,
                                  double noise_variance);

    [[nodiscard]] std::size_t dim() const {
        return static_cast<std::size_t>(log_lengthscales.size());
    }
    [[nodiscard]] Eigen::VectorXd lengthscales() const { return log_lengthscales.array().exp(); }
    [[nodiscard]] double signal_variance() const;
    [[nodiscard]] double noise_variance() const;

    // Projects every hyperparameter into its admissible interval.
    void clamp();

    // Flat layout used by the optimizer: [log ls..., log sf2, log sn2].
    [[nodiscard]] Eigen::VectorXd to_vector() const;
    static KernelParams from_vector(const Eigen::VectorXd& v);
};

// Matern-5/2 correlation as a function of scaled distance r.
double matern52_correlation(double r);

// k(a, b) = sf2 * m(r), r^2 = sum_i ((a_i - b_i) / l_i)^2.
double matern_kernel(const Eigen::Ref<const Eigen::VectorXd>& a,
                     const Eigen::Ref<const Eigen::VectorXd>& b, const KernelParams& params);

// Noise-free cross-covariance between the rows of A and B.
Eigen::MatrixXd kernel_matrix(const Eigen::Ref<const Eigen::MatrixXd>& a,
                              const Eigen::Ref<const Eigen::MatrixXd>& b,
                              const KernelParams& params);

// Cholesky of `k`, adding diagonal jitter 1e-10, 1e-9, ..., 1e-4 until it
// succeeds. Throws CholeskyFailure when the ladder is exhausted.
Eigen::LLT<Eigen::MatrixXd> jittered_cholesky(const Eigen::MatrixXd& k, double* jitter_used = nullptr);

struct LogMarginalLikelihood {
    double value = 0.0;
    // Derivative with respect to KernelParams::to_vector() entries.
    Eigen::VectorXd gradient;
};

// Log marginal likelihood of zero-mean targets `y` with analytic gradient.
LogMarginalLikelihood log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                              const KernelParams& params);

struct GpFitConfig {
    int iterations = 50;
    int restarts = 2;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
};

struct GpPrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;
};

// Exact GP regression on unit-box inputs with standardized targets.
class GpModel {
public:
    // Fits hyperparameters by Adam ascent on the log marginal likelihood,
    // starting from `init` and `config.restarts` random points. Duplicate
    // rows are merged by averaging their targets. With one distinct point
    // `init` is used unchanged.
    static GpModel fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& init,
                       const GpFitConfig& config = {});

    // Conditions on the data with fixed hyperparameters.
    static GpModel condition(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const KernelParams& params);

    [[nodiscard]] GpPrediction predict(const Eigen::MatrixXd& xq) const;

    // Joint posterior draws over the rows of `xq`: one draw per output row.
    [[nodiscard]] Eigen::MatrixXd sample_posterior(const Eigen::MatrixXd& xq, std::uint64_t seed,
                                                   std::size_t count) const;

    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(x_.cols()); }
    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(x_.rows()); }
    [[nodiscard]] const KernelParams& params() const { return params_; }
    [[nodiscard]] const Eigen::MatrixXd& x() const { return x_; }
    // Standardized targets.
    [[nodiscard]] const Eigen::VectorXd& y() const { return y_; }
    [[nodiscard]] double y_mean() const { return y_mean_; }
    [[nodiscard]] double y_std() const { return y_std_; }
    [[nodiscard]] bool degenerate_targets() const { return degenerate_; }
    [[nodiscard]] const Eigen::MatrixXd& chol() const { return chol_; }
    [[nodiscard]] const Eigen::VectorXd& alpha() const { return alpha_; }
    [[nodiscard]] double log_marginal_likelihood() const { return lml_; }

private:
    GpModel() = default;
    static GpModel prepare(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);
    void factorize();

    Eigen::MatrixXd x_;
    Eigen::VectorXd y_;
    KernelParams params_;
    Eigen::MatrixXd chol_;
    Eigen::VectorXd alpha_;
    double y_mean_ = 0.0;
    double y_std_ = 1.0;
    bool degenerate_ = false;
    double lml_ = 0.0;
};

}  // namespace latune
