#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "latune/param_space.hpp"

namespace latune {

inline constexpr double kDefaultFallPenalty = 100.0;

struct EnvSpec {
    std::string env_id;
    std::size_t dim = 0;
    Bounds bounds = Bounds::unit(1);
    std::size_t horizon = 1;
    double fall_penalty = kDefaultFallPenalty;
    // Desired value of the observed quantity.
    std::vector<double> target;

    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    std::vector<double> observed;
    std::vector<double> target;
    double running_cost = 0.0;
};

struct RolloutResult {
    double cost = 0.0;
    bool fell = false;
    std::optional<std::size_t> fall_step;
    // Filled only when a rollout is recorded.
    std::vector<StepRecord> steps;
};

// step,observed,target,running_cost; vector quantities are joined with ';'.
void write_rollout_csv(std::ostream& out, const RolloutResult& rollout);

// Accumulates the path cost: squared tracking error per step, replaced by
// the fall penalty (once, terminating) on the step the system falls.
class PathCost {
public:
    PathCost(double fall_penalty, bool record);

    // Adds ||observed - target||^2 for `step`.
    void add_step(std::size_t step, std::span<const double> observed, std::span<const double> target);
    void fall(std::size_t step);

    [[nodiscard]] bool fell() const { return result_.fell; }
    [[nodiscard]] RolloutResult finish() &&;

private:
    double fall_penalty_;
    bool record_;
    RolloutResult result_;
};

// Closed-loop environment: evaluate() is a pure function of (theta, seed).
class Environment {
public:
    virtual ~Environment() = default;

    [[nodiscard]] virtual const EnvSpec& spec() const = 0;

    // `theta` must be in the Original space and inside spec().bounds.
    [[nodiscard]] RolloutResult evaluate(const ParamVector& theta, std::uint64_t seed,
                                         bool record = false) const;

protected:
    [[nodiscard]] virtual RolloutResult rollout(std::span<const double> theta, std::uint64_t seed,
                                                bool record) const = 0;
};

// cost(theta) = g(P (theta_unit - theta0)): P is a seeded row-orthonormal
// projection onto dim_true coordinates and g a sphere with a cosine ripple
// whose global minimum is g(0) = 0. g above fall_level counts as a fall.
class SyntheticEmbedded final : public Environment {
public:
    struct Options {
        std::size_t dim_high = 77;
        std::size_t dim_true = 5;
        std::uint64_t seed = 0;
        double sphere_weight = 100.0;
        double ripple_weight = 2.0;
        double ripple_frequency = 3.0;
        double fall_level = 20.0;
    };

    explicit SyntheticEmbedded(Options options);

    [[nodiscard]] const EnvSpec& spec() const override { return spec_; }
    [[nodiscard]] const Options& options() const { return options_; }
    [[nodiscard]] const Eigen::MatrixXd& projection() const { return projection_; }
    [[nodiscard]] const Eigen::VectorXd& offset() const { return offset_; }

    // g(y) without the fall rule.
    [[nodiscard]] double landscape(const Eigen::VectorXd& y) const;
    [[nodiscard]] Eigen::VectorXd project(const Eigen::VectorXd& theta_unit) const;

protected:
    RolloutResult rollout(std::span<const double> theta, std::uint64_t seed, bool record) const override;

private:
    Options options_;
    EnvSpec spec_;
    Eigen::MatrixXd projection_;  // dim_true x dim_high
    Eigen::VectorXd offset_;
};

// Cart-pole velocity tracking with a time-segmented state-feedback schedule.
// Per segment: gains on (x - x_ref, xdot - v_des, angle, angular rate) and a
// feed-forward gain on v_des.
class CartPoleTracking final : public Environment {
public:
    struct Options {
        std::size_t segments = 5;
        double target_velocity = 0.5;
        std::size_t horizon = 5000;
        double dt = 0.02;
        double cart_mass = 1.0;
        double pole_mass = 0.1;
        double pole_length = 0.5;
        double gravity = 9.81;
        double angle_limit = 0.5;
        double position_error_limit = 5.0;
        // Seeded initial offsets are uniform in +-noise on every state.
        double initial_noise = 0.05;
        double initial_velocity = 0.0;
        double initial_angle = 0.0;
        std::string env_id = "cartpole25";
        // Per-segment search box for (k_x, k_v, k_angle, k_rate, k_ff).
        std::array<double, 5> gain_lower{0.0, 0.0, 20.0, 3.0, -1.0};
        std::array<double, 5> gain_upper{5.0, 8.0, 60.0, 12.0, 1.0};
    };

    static constexpr std::size_t kParamsPerSegment = 5;

    explicit CartPoleTracking(Options options);

    [[nodiscard]] const EnvSpec& spec() const override { return spec_; }
    [[nodiscard]] const Options& options() const { return options_; }

protected:
    RolloutResult rollout(std::span<const double> theta, std::uint64_t seed, bool record) const override;

private:
    Options options_;
    EnvSpec spec_;
};

// Double integrator driven by a receding-horizon LQ controller: every step
// solves the finite-horizon problem by a Riccati recursion and applies the
// first input clamped to [u_min, u_max]. Tuned per segment: diag(Q) (2),
// R (1) and the terminal weights (2).
class DoubleIntegratorMpc final : public Environment {
public:
    struct Options {
        std::size_t schedule_len = 5;
        double target_velocity = 0.5;
        std::size_t horizon = 200;
        std::size_t mpc_horizon = 20;
        double dt = 0.05;
        double u_min = -2.0;
        double u_max = 2.0;
        double position_limit = 10.0;
        double initial_position_noise = 0.05;
        double max_weight = 10.0;
        std::string env_id = "dintmpc";
    };

    static constexpr std::size_t kParamsPerSegment = 5;

    explicit DoubleIntegratorMpc(Options options);

    [[nodiscard]] const EnvSpec& spec() const override { return spec_; }
    [[nodiscard]] const Options& options() const { return options_; }

    // First-step feedback gain u = -K e of the LQ problem with the given
    // weights over `mpc_horizon` steps. Zero when the problem is degenerate.
    [[nodiscard]] Eigen::RowVector2d mpc_gain(double q_pos, double q_vel, double r,
                                              double qt_pos, double qt_vel) const;

protected:
    RolloutResult rollout(std::span<const double> theta, std::uint64_t seed, bool record) const override;

private:
    Options options_;
    EnvSpec spec_;
};

// Builds a registered environment: "synthetic77", "cartpole25" or "dintmpc".
// An optional "@<value>" suffix overrides the target velocity of the
// cart-pole and double-integrator tasks (e.g. "cartpole25@0.8").
std::unique_ptr<Environment> make_environment(const std::string& env_id);

// The registered base ids.
std::vector<std::string> registered_environments();

}  // namespace latune
