#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "latune/environments.hpp"
#include "latune/errors.hpp"
#include "latune/pipeline.hpp"

using namespace latune;

namespace {

ParamVector original(const Eigen::VectorXd& v) { return ParamVector::original({v.data(), v.data() + v.size()}); }

ParamVector uniform_theta(const Environment& env, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto& b = env.spec().bounds;
    std::vector<double> v(env.spec().dim);
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = b.lower()[i] + unif(rng) * (b.upper()[i] - b.lower()[i]);
    }
    return ParamVector::original(v);
}

std::vector<double> repeat_segment(const std::vector<double>& seg, std::size_t times) {
    std::vector<double> out;
    for (std::size_t i = 0; i < times; ++i) {
        out.insert(out.end(), seg.begin(), seg.end());
    }
    return out;
}

}  // namespace

TEST(PathCost, SumsSquaredErrorsAndAddsPenaltyOnce) {
    PathCost pc(100.0, true);
    const std::vector<double> target{0.0, 0.0};
    pc.add_step(0, std::vector<double>{1.0, 2.0}, target);
    pc.add_step(1, std::vector<double>{-0.5, 0.0}, target);
    EXPECT_FALSE(pc.fell());
    pc.fall(2);
    EXPECT_TRUE(pc.fell());
    const RolloutResult r = std::move(pc).finish();
    EXPECT_DOUBLE_EQ(r.cost, 5.0 + 0.25 + 100.0);
    EXPECT_TRUE(r.fell);
    ASSERT_TRUE(r.fall_step.has_value());
    EXPECT_EQ(*r.fall_step, 2u);
    ASSERT_EQ(r.steps.size(), 3u);
    EXPECT_DOUBLE_EQ(r.steps[0].running_cost, 5.0);
    EXPECT_DOUBLE_EQ(r.steps[1].running_cost, 0.25);
    EXPECT_DOUBLE_EQ(r.steps[2].running_cost, 100.0);

    std::ostringstream csv;
    write_rollout_csv(csv, r);
    const std::string s = csv.str();
    EXPECT_EQ(s.rfind("step,observed,target,running_cost\n", 0), 0u);
    EXPECT_NE(s.find("0,1;2,0;0,5\n"), std::string::npos);
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}

TEST(PathCost, RejectsMismatchedSizes) {
    PathCost pc(100.0, false);
    EXPECT_THROW(pc.add_step(0, std::vector<double>{1.0}, std::vector<double>{0.0, 0.0}), DimensionMismatch);
}

TEST(Synthetic, ProjectionIsRowOrthonormal) {
    const SyntheticEmbedded env({});
    const Eigen::MatrixXd& p = env.projection();
    ASSERT_EQ(p.rows(), 5);
    ASSERT_EQ(p.cols(), 77);
    EXPECT_LT((p * p.transpose() - Eigen::MatrixXd::Identity(5, 5)).norm(), 1e-12);
    EXPECT_EQ(env.spec().env_id, "synthetic77");
    EXPECT_EQ(env.spec().dim, 77u);
    EXPECT_TRUE((env.offset().array() >= 0.3).all() && (env.offset().array() <= 0.7).all());
}

TEST(Synthetic, LandscapeHandEvaluated) {
    const SyntheticEmbedded env({});
    Eigen::VectorXd y = Eigen::VectorXd::Zero(5);
    EXPECT_EQ(env.landscape(y), 0.0);
    y(0) = 0.1;
    // 100 * 0.01 + 2 * (1 - cos(0.6 pi))
    EXPECT_NEAR(env.landscape(y), 3.618033988749895, 1e-12);
}

TEST(Synthetic, OptimumHasZeroCost) {
    const SyntheticEmbedded env({});
    const Eigen::VectorXd theta = 2.0 * env.offset().array() - 1.0;
    const RolloutResult r = env.evaluate(original(theta), 0);
    EXPECT_NEAR(r.cost, 0.0, 1e-20);
    EXPECT_FALSE(r.fell);
}

TEST(Synthetic, CostInvariantAlongNullSpace) {
    const SyntheticEmbedded env({});
    const Eigen::MatrixXd& p = env.projection();
    const Eigen::MatrixXd null_proj = Eigen::MatrixXd::Identity(77, 77) - p.transpose() * p;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> gauss;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd u = env.offset();
        Eigen::VectorXd w(77), dir(77);
        for (int i = 0; i < 77; ++i) {
            w(i) = 0.05 * gauss(rng);
            dir(i) = gauss(rng);
        }
        u += p.transpose() * (p * w);  // a point off the optimum
        dir = null_proj * dir;
        dir *= 0.2 / dir.cwiseAbs().maxCoeff();
        const Eigen::VectorXd a = 2.0 * u.array() - 1.0;
        const Eigen::VectorXd b = 2.0 * (u + dir).array() - 1.0;
        const double ca = env.evaluate(original(a), 1).cost;
        const double cb = env.evaluate(original(b), 2).cost;
        EXPECT_NEAR(ca, cb, 1e-10);
    }
}

TEST(Synthetic, CostMatchesClosedForm) {
    const SyntheticEmbedded env({});
    const Eigen::MatrixXd& p = env.projection();
    const Eigen::VectorXd& th0 = env.offset();
    for (std::uint64_t s = 0; s < 50; ++s) {
        std::mt19937_64 rng(s);
        std::uniform_real_distribution<double> unif(-0.15, 0.15);
        std::vector<double> theta(77);
        for (std::size_t i = 0; i < 77; ++i) {
            theta[i] = 2.0 * th0(static_cast<Eigen::Index>(i)) - 1.0 + unif(rng);
        }
        double g = 0.0;
        for (Eigen::Index r = 0; r < 5; ++r) {
            double y = 0.0;
            for (Eigen::Index i = 0; i < 77; ++i) {
                y += p(r, i) * ((theta[static_cast<std::size_t>(i)] + 1.0) / 2.0 - th0(i));
            }
            g += 100.0 * y * y + 2.0 * (1.0 - std::cos(2.0 * M_PI * 3.0 * y));
        }
        const double expected = g > 20.0 ? 100.0 : g;
        EXPECT_NEAR(env.evaluate(ParamVector::original(theta), s).cost, expected, 1e-10) << "sample " << s;
    }
}

TEST(Synthetic, FarPointsFallWithExactPenalty) {
    const SyntheticEmbedded env({});
    const Eigen::VectorXd theta = 2.0 * (env.offset() + 0.5 * env.projection().row(0).transpose()).array() - 1.0;
    ASSERT_TRUE((theta.array().abs() <= 1.0).all());
    const RolloutResult r = env.evaluate(original(theta), 0, true);
    EXPECT_TRUE(r.fell);
    EXPECT_EQ(r.cost, 100.0);
    EXPECT_EQ(r.fall_step, std::optional<std::size_t>(0));
}

TEST(Synthetic, InputValidation) {
    const SyntheticEmbedded env({});
    std::vector<double> theta(77, 0.0);
    theta[10] = 1.5;
    try {
        (void)env.evaluate(ParamVector::original(theta), 0);
        FAIL() << "expected OutOfBounds";
    } catch (const OutOfBounds& e) {
        EXPECT_EQ(e.index(), 10u);
    }
    EXPECT_THROW((void)env.evaluate(ParamVector::original(std::vector<double>(76, 0.0)), 0), DimensionMismatch);
    EXPECT_THROW((void)env.evaluate(ParamVector::unit(std::vector<double>(77, 0.5)), 0), InvalidConfig);
    SyntheticEmbedded::Options bad;
    bad.dim_true = 77;
    EXPECT_THROW(SyntheticEmbedded{bad}, InvalidConfig);
}

TEST(Environments, EvaluationIsPureInThetaAndSeed) {
    for (const auto& id : registered_environments()) {
        const auto env = make_environment(id);
        for (std::uint64_t s = 0; s < 5; ++s) {
            const ParamVector theta = uniform_theta(*env, s);
            const RolloutResult a = env->evaluate(theta, 1000 + s);
            const RolloutResult b = env->evaluate(theta, 1000 + s);
            EXPECT_EQ(a.cost, b.cost) << id;
            EXPECT_EQ(a.fell, b.fell) << id;
            EXPECT_GE(a.cost, 0.0) << id;
            EXPECT_TRUE(std::isfinite(a.cost)) << id;
        }
    }
}

TEST(Environments, RecordedRolloutMatchesCost) {
    for (const auto& id : registered_environments()) {
        const auto env = make_environment(id);
        const ParamVector theta = uniform_theta(*env, 3);
        const RolloutResult plain = env->evaluate(theta, 9);
        const RolloutResult rec = env->evaluate(theta, 9, true);
        EXPECT_EQ(plain.cost, rec.cost) << id;
        ASSERT_FALSE(rec.steps.empty()) << id;
        EXPECT_TRUE(plain.steps.empty()) << id;
        double sum = 0.0;
        for (const auto& st : rec.steps) {
            sum += st.running_cost;
        }
        EXPECT_NEAR(sum, rec.cost, 1e-12 * std::max(1.0, rec.cost)) << id;
    }
}

TEST(CartPole, DimensionAndBounds) {
    const CartPoleTracking env({});
    EXPECT_EQ(env.spec().dim, 25u);
    EXPECT_EQ(env.spec().env_id, "cartpole25");
    EXPECT_EQ(env.spec().horizon, 5000u);
    for (std::size_t s = 0; s < 5; ++s) {
        EXPECT_EQ(env.spec().bounds.lower()[5 * s + 2], 20.0);
        EXPECT_EQ(env.spec().bounds.upper()[5 * s + 2], 60.0);
    }
}

TEST(CartPole, RestingSystemWithZeroTargetCostsNothing) {
    CartPoleTracking::Options o;
    o.target_velocity = 0.0;
    o.initial_noise = 0.0;
    const CartPoleTracking env(o);
    const RolloutResult r = env.evaluate(ParamVector::original(repeat_segment({1.0, 2.0, 30.0, 5.0, 0.5}, 5)), 0);
    EXPECT_EQ(r.cost, 0.0);
    EXPECT_FALSE(r.fell);
}

TEST(CartPole, CoastingCartFallsOnPositionError) {
    // Upright pole at rest: only the position and velocity gains could act and
    // they are zero, so the cart coasts at 1 m/s while the reference moves at
    // 0.3 m/s. The error 0.014 k exceeds 5 m first at step 358.
    CartPoleTracking::Options o;
    o.target_velocity = 0.3;
    o.initial_velocity = 1.0;
    o.initial_noise = 0.0;
    const CartPoleTracking env(o);
    const RolloutResult r = env.evaluate(ParamVector::original(repeat_segment({0.0, 0.0, 20.0, 3.0, 0.0}, 5)), 0);
    EXPECT_TRUE(r.fell);
    ASSERT_TRUE(r.fall_step.has_value());
    EXPECT_EQ(*r.fall_step, 358u);
    EXPECT_NEAR(r.cost, 358 * 0.49 + 100.0, 1e-9);
}

TEST(CartPole, TiltedStartFallsImmediately) {
    CartPoleTracking::Options o;
    o.initial_angle = 0.6;
    o.initial_noise = 0.0;
    const CartPoleTracking env(o);
    const RolloutResult r = env.evaluate(ParamVector::original(repeat_segment({1.0, 2.0, 30.0, 5.0, 0.0}, 5)), 0);
    EXPECT_EQ(r.cost, 100.0);
    EXPECT_EQ(r.fall_step, std::optional<std::size_t>(0));
}

TEST(CartPole, ZeroGainsLetThePoleFall) {
    CartPoleTracking::Options o;
    o.gain_lower = {0.0, 0.0, 0.0, 0.0, -1.0};
    const CartPoleTracking env(o);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const RolloutResult r = env.evaluate(ParamVector::original(std::vector<double>(25, 0.0)), s);
        EXPECT_TRUE(r.fell);
        EXPECT_GE(r.cost, 100.0);
    }
}

TEST(CartPole, EquilibriumIsKeptWithoutControl) {
    CartPoleTracking::Options o;
    o.gain_lower = {0.0, 0.0, 0.0, 0.0, -1.0};
    o.target_velocity = 0.0;
    o.initial_noise = 0.0;
    const CartPoleTracking env(o);
    const RolloutResult r = env.evaluate(ParamVector::original(std::vector<double>(25, 0.0)), 0, true);
    EXPECT_FALSE(r.fell);
    EXPECT_EQ(r.cost, 0.0);
    for (const auto& st : r.steps) {
        ASSERT_EQ(st.observed[0], 0.0);
    }
}

TEST(CartPole, SeedChangesInitialState) {
    const auto env = make_environment("cartpole25");
    const ParamVector theta = ParamVector::original(repeat_segment({1.0, 2.0, 30.0, 5.0, 0.0}, 5));
    EXPECT_NE(env->evaluate(theta, 1).cost, env->evaluate(theta, 2).cost);
}

TEST(CartPole, SegmentsSwitchOnSchedule) {
    CartPoleTracking::Options o;
    o.horizon = 100;
    o.initial_noise = 0.0;
    const CartPoleTracking env(o);
    std::vector<double> theta = repeat_segment({1.0, 2.0, 30.0, 5.0, 0.0}, 5);
    const RolloutResult base = env.evaluate(ParamVector::original(theta), 0, true);
    theta[4 * 5 + 1] = 6.0;  // last segment only
    const RolloutResult changed = env.evaluate(ParamVector::original(theta), 0, true);
    ASSERT_EQ(base.steps.size(), 100u);
    // Steps 0..80 see the same gains; step 81 is the first affected by the
    // force applied during step 80.
    for (std::size_t k = 0; k <= 80; ++k) {
        EXPECT_EQ(base.steps[k].observed, changed.steps[k].observed) << k;
    }
    EXPECT_NE(base.steps[81].observed, changed.steps[81].observed);
}

TEST(CartPole, HandTunedScheduleIsStable) {
    const auto env = make_environment("cartpole25");
    const auto thetas = load_theta_file(std::filesystem::path(LATUNE_SOURCE_DIR) / "data/cartpole25_hand_tuned.json");
    ASSERT_EQ(thetas.size(), 1u);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const RolloutResult r = env->evaluate(ParamVector::original(thetas[0]), s);
        EXPECT_FALSE(r.fell);
        EXPECT_LT(r.cost, 100.0);
    }
}

TEST(DoubleIntegrator, ZeroWeightsNeverMove) {
    const auto env = make_environment("dintmpc");
    EXPECT_EQ(env->spec().dim, 25u);
    const RolloutResult r = env->evaluate(ParamVector::original(std::vector<double>(25, 0.0)), 5);
    // velocity stays 0 against a 0.5 target for 200 steps
    EXPECT_NEAR(r.cost, 0.25 * 200, 1e-12);
    EXPECT_FALSE(r.fell);
}

TEST(DoubleIntegrator, OneStepGainHandComputed) {
    DoubleIntegratorMpc::Options o;
    o.mpc_horizon = 1;
    const DoubleIntegratorMpc env(o);
    const Eigen::RowVector2d k = env.mpc_gain(1.0, 1.0, 0.5, 2.0, 3.0);
    EXPECT_NEAR(k(0), 0.0049260780413913725, 1e-15);
    EXPECT_NEAR(k(1), 0.29581098638555187, 1e-15);
}

TEST(DoubleIntegrator, LongHorizonGainConvergesAndStabilises) {
    DoubleIntegratorMpc::Options o;
    o.mpc_horizon = 2000;
    const DoubleIntegratorMpc a(o);
    o.mpc_horizon = 4000;
    const DoubleIntegratorMpc b(o);
    const Eigen::RowVector2d ka = a.mpc_gain(3.0, 1.0, 0.2, 1.0, 1.0);
    const Eigen::RowVector2d kb = b.mpc_gain(3.0, 1.0, 0.2, 1.0, 1.0);
    EXPECT_LT((ka - kb).norm(), 1e-10);
    const double dt = o.dt;
    Eigen::Matrix2d acl;
    acl << 1.0, dt, 0.0, 1.0;
    acl -= Eigen::Vector2d(0.5 * dt * dt, dt) * ka;
    EXPECT_LT(acl.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
}

TEST(DoubleIntegrator, SensibleWeightsTrackBetterThanIdle) {
    const auto env = make_environment("dintmpc");
    const RolloutResult r =
        env->evaluate(ParamVector::original(repeat_segment({1.0, 5.0, 0.1, 1.0, 1.0}, 5)), 0);
    EXPECT_FALSE(r.fell);
    EXPECT_LT(r.cost, 10.0);
}

TEST(DoubleIntegrator, StateWeightsBeatInputWeights) {
    const auto env = make_environment("dintmpc");
    const ParamVector q_heavy = ParamVector::original(repeat_segment({10.0, 10.0, 0.01, 1.0, 1.0}, 5));
    const ParamVector r_heavy = ParamVector::original(repeat_segment({0.01, 0.01, 10.0, 1.0, 1.0}, 5));
    std::vector<double> diff;
    for (std::uint64_t s = 0; s < 5; ++s) {
        diff.push_back(env->evaluate(q_heavy, s).cost - env->evaluate(r_heavy, s).cost);
    }
    std::sort(diff.begin(), diff.end());
    EXPECT_LT(diff[2], 0.0);
}

TEST(DoubleIntegrator, InputsStayClamped) {
    // With aggressive weights the unclamped input would be far beyond 2, so
    // the velocity change per step shows the clamp directly.
    DoubleIntegratorMpc::Options o;
    o.initial_position_noise = 0.0;
    o.target_velocity = 0.8;
    const DoubleIntegratorMpc env(o);
    const RolloutResult r =
        env.evaluate(ParamVector::original(repeat_segment({10.0, 10.0, 0.0, 10.0, 10.0}, 5)), 0, true);
    ASSERT_FALSE(r.fell);
    double max_dv = 0.0;
    for (std::size_t k = 1; k < r.steps.size(); ++k) {
        max_dv = std::max(max_dv, std::abs(r.steps[k].observed[0] - r.steps[k - 1].observed[0]));
    }
    EXPECT_LE(max_dv, 2.0 * o.dt + 1e-12);
    EXPECT_NEAR(max_dv, 2.0 * o.dt, 1e-12);
}

TEST(Registry, BuildsKnownIdsAndTargetOverrides) {
    EXPECT_EQ(registered_environments(), (std::vector<std::string>{"synthetic77", "cartpole25", "dintmpc"}));
    const auto cp = make_environment("cartpole25@0.8");
    EXPECT_EQ(cp->spec().target, std::vector<double>{0.8});
    EXPECT_EQ(cp->spec().env_id, "cartpole25@0.8");
    EXPECT_EQ(make_environment("dintmpc@-0.25")->spec().target, std::vector<double>{-0.25});
    EXPECT_THROW((void)make_environment("synthetic77@1"), InvalidConfig);
    EXPECT_THROW((void)make_environment("cartpole25@fast"), InvalidConfig);
    EXPECT_THROW((void)make_environment("pendulum"), InvalidConfig);
}
