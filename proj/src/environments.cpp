#include "latune/environments.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <cstdio>
#include <random>

#include <Eigen/QR>

#include "latune/design.hpp"
#include "latune/errors.hpp"

namespace latune {

void EnvSpec::validate() const {
    if (dim != bounds.dim()) {
        throw DimensionMismatch(dim, bounds.dim());
    }
    if (horizon < 1) {
        throw InvalidConfig("environment horizon must be >= 1");
    }
    if (!(fall_penalty > 0.0)) {
        throw InvalidConfig("fall penalty must be positive");
    }
}

namespace {

std::string join(const std::vector<double>& v) {
    std::string s;
    char buf[32];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        if (i > 0) {
            s += ';';
        }
        s += buf;
    }
    return s;
}

}  // namespace

void write_rollout_csv(std::ostream& out, const RolloutResult& rollout) {
    out << "step,observed,target,running_cost\n";
    const auto old_precision = out.precision(17);
    for (const auto& s : rollout.steps) {
        out << s.step << ',' << join(s.observed) << ',' << join(s.target) << ',' << s.running_cost
            << '\n';
    }
    out.precision(old_precision);
}

PathCost::PathCost(double fall_penalty, bool record) : fall_penalty_(fall_penalty), record_(record) {}

void PathCost::add_step(std::size_t step, std::span<const double> observed,
                        std::span<const double> target) {
    if (observed.size() != target.size()) {
        throw DimensionMismatch(target.size(), observed.size());
    }
    double q = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double e = observed[i] - target[i];
        q += e * e;
    }
    result_.cost += q;
    if (record_) {
        result_.steps.push_back({step, {observed.begin(), observed.end()},
                                 {target.begin(), target.end()}, q});
    }
}

void PathCost::fall(std::size_t step) {
    result_.cost += fall_penalty_;
    result_.fell = true;
    result_.fall_step = step;
    if (record_) {
        result_.steps.push_back({step, {}, {}, fall_penalty_});
    }
}

RolloutResult PathCost::finish() && { return std::move(result_); }

RolloutResult Environment::evaluate(const ParamVector& theta, std::uint64_t seed, bool record) const {
    const EnvSpec& s = spec();
    if (theta.space() != Space::Original) {
        throw InvalidConfig("environments evaluate original-space parameters");
    }
    if (theta.size() != s.dim) {
        throw DimensionMismatch(s.dim, theta.size());
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (!(theta[i] >= s.bounds.lower()[i] && theta[i] <= s.bounds.upper()[i])) {
            throw OutOfBounds(i, theta[i]);
        }
    }
    return rollout(theta.values(), seed, record);
}

// ---------------------------------------------------------------------------

SyntheticEmbedded::SyntheticEmbedded(Options options) : options_(options) {
    if (options_.dim_true < 1 || options_.dim_true >= options_.dim_high) {
        throw InvalidConfig("synthetic environment needs 1 <= dim_true < dim_high");
    }
    if (!(options_.fall_level > 0.0)) {
        throw InvalidConfig("synthetic fall level must be positive");
    }
    const auto dh = static_cast<Eigen::Index>(options_.dim_high);
    const auto dt = static_cast<Eigen::Index>(options_.dim_true);
    Rng rng(options_.seed);
    const Eigen::MatrixXd gauss = standard_normal(options_.dim_high, options_.dim_true, rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    projection_ = (qr.householderQ() * Eigen::MatrixXd::Identity(dh, dt)).transpose();
    std::uniform_real_distribution<double> unif(0.3, 0.7);
    offset_.resize(dh);
    for (Eigen::Index i = 0; i < dh; ++i) {
        offset_(i) = unif(rng);
    }

    spec_.env_id = "synthetic" + std::to_string(options_.dim_high);
    spec_.dim = options_.dim_high;
    spec_.bounds = Bounds::uniform(options_.dim_high, -1.0, 1.0);
    spec_.horizon = 1;
    spec_.fall_penalty = kDefaultFallPenalty;
    spec_.target.assign(options_.dim_true, 0.0);
    spec_.validate();
}

Eigen::VectorXd SyntheticEmbedded::project(const Eigen::VectorXd& theta_unit) const {
    return projection_ * (theta_unit - offset_);
}

double SyntheticEmbedded::landscape(const Eigen::VectorXd& y) const {
    const double two_pi_f = 2.0 * M_PI * options_.ripple_frequency;
    return options_.sphere_weight * y.squaredNorm() +
           options_.ripple_weight * (1.0 - (two_pi_f * y.array()).cos()).sum();
}

RolloutResult SyntheticEmbedded::rollout(std::span<const double> theta, std::uint64_t /*seed*/,
                                         bool record) const {
    const ParamVector unit = normalize(ParamVector::original({theta.begin(), theta.end()}), spec_.bounds);
    const Eigen::VectorXd y =
        project(Eigen::Map<const Eigen::VectorXd>(unit.values().data(), static_cast<Eigen::Index>(unit.size())));
    const double g = landscape(y);
    RolloutResult r;
    if (!std::isfinite(g) || g > options_.fall_level) {
        r.cost = spec_.fall_penalty;
        r.fell = true;
        r.fall_step = 0;
    } else {
        r.cost = g;
    }
    if (record) {
        r.steps.push_back({0, {y.data(), y.data() + y.size()}, spec_.target, r.cost});
    }
    return r;
}

// ---------------------------------------------------------------------------

CartPoleTracking::CartPoleTracking(Options options) : options_(std::move(options)) {
    if (options_.segments < 1) {
        throw InvalidConfig("cart-pole needs at least one gain segment");
    }
    if (options_.horizon < 1 || !(options_.dt > 0.0)) {
        throw InvalidConfig("cart-pole needs horizon >= 1 and dt > 0");
    }
    std::vector<double> lower;
    std::vector<double> upper;
    for (std::size_t s = 0; s < options_.segments; ++s) {
        lower.insert(lower.end(), options_.gain_lower.begin(), options_.gain_lower.end());
        upper.insert(upper.end(), options_.gain_upper.begin(), options_.gain_upper.end());
    }
    spec_.env_id = options_.env_id;
    spec_.dim = kParamsPerSegment * options_.segments;
    spec_.bounds = Bounds(std::move(lower), std::move(upper));
    spec_.horizon = options_.horizon;
    spec_.fall_penalty = kDefaultFallPenalty;
    spec_.target = {options_.target_velocity};
    spec_.validate();
}

RolloutResult CartPoleTracking::rollout(std::span<const double> theta, std::uint64_t seed,
                                        bool record) const {
    const auto& o = options_;
    Rng rng(seed);
    std::uniform_real_distribution<double> noise(-o.initial_noise, o.initial_noise);
    double x = 0.0;
    double v = o.initial_velocity;
    double angle = o.initial_angle;
    double rate = 0.0;
    if (o.initial_noise > 0.0) {
        x += noise(rng);
        v += noise(rng);
        angle += noise(rng);
        rate += noise(rng);
    }
    const double total_mass = o.cart_mass + o.pole_mass;
    const double pole_ml = o.pole_mass * o.pole_length;
    const double v_des = o.target_velocity;

    PathCost cost(spec_.fall_penalty, record);
    for (std::size_t step = 0; step < o.horizon; ++step) {
        const double x_ref = v_des * static_cast<double>(step) * o.dt;
        const bool finite = std::isfinite(x) && std::isfinite(v) && std::isfinite(angle) &&
                            std::isfinite(rate);
        if (!finite || std::abs(angle) > o.angle_limit ||
            std::abs(x - x_ref) > o.position_error_limit) {
            cost.fall(step);
            break;
        }
        const double observed = v;
        cost.add_step(step, std::span(&observed, 1), spec_.target);

        const std::size_t seg = std::min(step * o.segments / o.horizon, o.segments - 1);
        const double* k = theta.data() + seg * kParamsPerSegment;
        const double force =
            k[0] * (x - x_ref) + k[1] * (v - v_des) + k[2] * angle + k[3] * rate + k[4] * v_des;

        const double sin_a = std::sin(angle);
        const double cos_a = std::cos(angle);
        const double temp = (force + pole_ml * rate * rate * sin_a) / total_mass;
        const double angle_acc =
            (o.gravity * sin_a - cos_a * temp) /
            (o.pole_length * (4.0 / 3.0 - o.pole_mass * cos_a * cos_a / total_mass));
        const double x_acc = temp - pole_ml * angle_acc * cos_a / total_mass;

        // Semi-implicit Euler.
        v += o.dt * x_acc;
        x += o.dt * v;
        rate += o.dt * angle_acc;
        angle += o.dt * rate;
    }
    return std::move(cost).finish();
}

// ---------------------------------------------------------------------------

DoubleIntegratorMpc::DoubleIntegratorMpc(Options options) : options_(std::move(options)) {
    if (options_.schedule_len < 1 || options_.mpc_horizon < 1 || options_.horizon < 1) {
        throw InvalidConfig("double integrator needs schedule_len, mpc_horizon and horizon >= 1");
    }
    if (!(options_.u_min < options_.u_max)) {
        throw InvalidConfig("double integrator needs u_min < u_max");
    }
    const std::size_t dim = kParamsPerSegment * options_.schedule_len;
    spec_.env_id = options_.env_id;
    spec_.dim = dim;
    spec_.bounds = Bounds::uniform(dim, 0.0, options_.max_weight);
    spec_.horizon = options_.horizon;
    spec_.fall_penalty = kDefaultFallPenalty;
    spec_.target = {options_.target_velocity};
    spec_.validate();
}

Eigen::RowVector2d DoubleIntegratorMpc::mpc_gain(double q_pos, double q_vel, double r, double qt_pos,
                                                 double qt_vel) const {
    const double dt = options_.dt;
    Eigen::Matrix2d a;
    a << 1.0, dt, 0.0, 1.0;
    const Eigen::Vector2d b(0.5 * dt * dt, dt);
    const Eigen::Matrix2d q = Eigen::Vector2d(q_pos, q_vel).asDiagonal();
    Eigen::Matrix2d p = Eigen::Vector2d(qt_pos, qt_vel).asDiagonal();
    Eigen::RowVector2d gain = Eigen::RowVector2d::Zero();
    for (std::size_t k = options_.mpc_horizon; k-- > 0;) {
        const double denom = r + b.dot(p * b);
        if (denom <= 1e-300) {
            // No cost at all on this stage: any input is optimal, take zero.
            gain.setZero();
        } else {
            gain = (b.transpose() * p * a) / denom;
        }
        p = q + a.transpose() * p * (a - b * gain);
        p = 0.5 * (p + p.transpose()).eval();
    }
    return gain;
}

RolloutResult DoubleIntegratorMpc::rollout(std::span<const double> theta, std::uint64_t seed,
                                           bool record) const {
    const auto& o = options_;
    std::vector<Eigen::RowVector2d> gains;
    gains.reserve(o.schedule_len);
    for (std::size_t s = 0; s < o.schedule_len; ++s) {
        const double* w = theta.data() + s * kParamsPerSegment;
        gains.push_back(mpc_gain(w[0], w[1], w[2], w[3], w[4]));
    }

    Rng rng(seed);
    std::uniform_real_distribution<double> noise(-o.initial_position_noise, o.initial_position_noise);
    double pos = o.initial_position_noise > 0.0 ? noise(rng) : 0.0;
    double vel = 0.0;
    const double v_des = o.target_velocity;

    PathCost cost(spec_.fall_penalty, record);
    for (std::size_t step = 0; step < o.horizon; ++step) {
        if (!std::isfinite(pos) || !std::isfinite(vel) || std::abs(pos) > o.position_limit) {
            cost.fall(step);
            break;
        }
        const double observed = vel;
        cost.add_step(step, std::span(&observed, 1), spec_.target);

        const std::size_t seg = std::min(step * o.schedule_len / o.horizon, o.schedule_len - 1);
        const double pos_ref = v_des * static_cast<double>(step) * o.dt;
        const Eigen::Vector2d err(pos - pos_ref, vel - v_des);
        const double u = std::clamp(-gains[seg].dot(err), o.u_min, o.u_max);
        pos += o.dt * vel + 0.5 * o.dt * o.dt * u;
        vel += o.dt * u;
    }
    return std::move(cost).finish();
}

// ---------------------------------------------------------------------------

std::vector<std::string> registered_environments() { return {"synthetic77", "cartpole25", "dintmpc"}; }

std::unique_ptr<Environment> make_environment(const std::string& env_id) {
    std::string base = env_id;
    std::optional<double> target;
    if (const auto at = env_id.find('@'); at != std::string::npos) {
        base = env_id.substr(0, at);
        try {
            std::size_t used = 0;
            target = std::stod(env_id.substr(at + 1), &used);
            if (used != env_id.size() - at - 1) {
                throw std::invalid_argument("trailing characters");
            }
        } catch (const std::exception&) {
            throw InvalidConfig("bad target suffix in env id '" + env_id + "'");
        }
    }
    if (base == "synthetic77") {
        if (target) {
            throw InvalidConfig("synthetic77 has no target to override");
        }
        return std::make_unique<SyntheticEmbedded>(SyntheticEmbedded::Options{});
    }
    if (base == "cartpole25") {
        CartPoleTracking::Options o;
        o.env_id = env_id;
        if (target) {
            o.target_velocity = *target;
        }
        return std::make_unique<CartPoleTracking>(o);
    }
    if (base == "dintmpc") {
        DoubleIntegratorMpc::Options o;
        o.env_id = env_id;
        if (target) {
            o.target_velocity = *target;
        }
        return std::make_unique<DoubleIntegratorMpc>(o);
    }
    throw InvalidConfig("unknown environment '" + env_id + "'");
}

}  // namespace latune
