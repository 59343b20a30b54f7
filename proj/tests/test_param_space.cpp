#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "latune/errors.hpp"
#include "latune/param_space.hpp"

using namespace latune;

TEST(Bounds, RejectsZeroWidthAndMismatch) {
    EXPECT_THROW(Bounds({0.0, 1.0}, {1.0, 1.0}), InvalidConfig);
    EXPECT_THROW(Bounds({0.0}, {1.0, 2.0}), DimensionMismatch);
    EXPECT_THROW(Bounds({}, {}), InvalidConfig);
    EXPECT_THROW(Bounds({0.0}, {NAN}), InvalidConfig);
}

TEST(ParamVector, UnitValuesMustLieInBox) {
    EXPECT_THROW(ParamVector::unit({0.5, 1.5}), OutOfUnitBox);
    EXPECT_THROW(ParamVector::latent({-0.1}), OutOfUnitBox);
    EXPECT_NO_THROW(ParamVector::original({-5.0, 7.0}));
}

TEST(Normalize, BoundaryCases) {
    const Bounds b({-1.0, 2.0, 0.0}, {3.0, 5.0, 0.5});
    EXPECT_EQ(normalize(ParamVector::original(b.lower()), b).values(), std::vector<double>(3, 0.0));
    EXPECT_EQ(normalize(ParamVector::original(b.upper()), b).values(), std::vector<double>(3, 1.0));
}

TEST(Normalize, HandEvaluatedAffineMap) {
    const Bounds b({0.0, 0.0}, {2.0, 4.0});
    const ParamVector u = normalize(ParamVector::original({1.0, 1.0}), b);
    EXPECT_EQ(u.space(), Space::Unit);
    EXPECT_DOUBLE_EQ(u[0], 0.5);
    EXPECT_DOUBLE_EQ(u[1], 0.25);
}

TEST(Normalize, OutOfBoundsIsAnErrorNotAClamp) {
    const Bounds b = Bounds::uniform(3, 0.0, 1.0);
    try {
        (void)normalize(ParamVector::original({0.5, 1.0 + 1e-9, 0.5}), b);
        FAIL() << "expected OutOfBounds";
    } catch (const OutOfBounds& e) {
        EXPECT_EQ(e.index(), 1u);
    }
    EXPECT_THROW((void)normalize(ParamVector::original({0.5, 0.5}), b), DimensionMismatch);
    EXPECT_THROW((void)normalize(ParamVector::unit({0.5, 0.5, 0.5}), b), InvalidConfig);
}

TEST(Denormalize, HandEvaluated) {
    const ParamVector a = denormalize(ParamVector::unit({0.5, 0.5}), Bounds::uniform(2, -1.0, 1.0));
    EXPECT_EQ(a.values(), (std::vector<double>{0.0, 0.0}));
    const ParamVector b = denormalize(ParamVector::unit({1.0, 0.0}), Bounds({0.0, 3.0}, {1.0, 5.0}));
    EXPECT_EQ(b.space(), Space::Original);
    EXPECT_EQ(b.values(), (std::vector<double>{1.0, 3.0}));
    EXPECT_THROW((void)denormalize(ParamVector::unit({0.5}), Bounds::unit(2)), DimensionMismatch);
}

TEST(Normalize, RoundTripsWithinRelativeTolerance) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + trial % 9;
        std::vector<double> lo(d), hi(d), theta(d), u(d);
        for (std::size_t i = 0; i < d; ++i) {
            lo[i] = -100.0 + 200.0 * unif(rng);
            hi[i] = lo[i] + 1e-3 + 50.0 * unif(rng);
            theta[i] = lo[i] + unif(rng) * (hi[i] - lo[i]);
            u[i] = unif(rng);
        }
        const Bounds b(lo, hi);
        const ParamVector back = denormalize(normalize(ParamVector::original(theta), b), b);
        const ParamVector uback = normalize(denormalize(ParamVector::unit(u), b), b);
        for (std::size_t i = 0; i < d; ++i) {
            EXPECT_LE(std::abs(back[i] - theta[i]), 1e-12 * std::max(1.0, std::abs(theta[i])));
            EXPECT_LE(std::abs(uback[i] - u[i]), 1e-12 * std::max(1.0, std::abs(u[i])) * 1e3);
        }
    }
}

namespace {

ReplayBuffer buffer_with_costs(const std::vector<double>& costs) {
    ReplayBuffer buf(2);
    for (std::size_t i = 0; i < costs.size(); ++i) {
        buf.append(make_sample(ParamVector::original({0.1 * static_cast<double>(i), -1.0}), costs[i],
                               Phase::Phase1, static_cast<std::int64_t>(i), 7, "toy"));
    }
    return buf;
}

}  // namespace

TEST(FilterStable, StrictThresholdKeepsOrder) {
    ReplayBuffer buf = buffer_with_costs({100.0, 99.99, 6.17});
    const auto out = filter_stable(buf, 100.0);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0], buf[1].theta);
    EXPECT_EQ(out[1], buf[2].theta);
    EXPECT_FALSE(buf[0].stable);
    EXPECT_TRUE(buf[1].stable);
    EXPECT_TRUE(buf[2].stable);
}

TEST(FilterStable, ZeroThresholdIsEmpty) {
    ReplayBuffer buf = buffer_with_costs({0.0, 3.0});
    EXPECT_THROW(filter_stable(buf, 0.0), EmptyResult);
}

TEST(FilterStable, MonotoneInThresholdAndMatchesRescan) {
    std::mt19937_64 rng(5);
    std::exponential_distribution<double> cost(1.0 / 80.0);
    std::vector<double> costs(5000);
    for (auto& c : costs) {
        c = cost(rng);
    }
    ReplayBuffer buf = buffer_with_costs(costs);
    std::stringstream ss;
    buf.write_jsonl(ss);
    ReplayBuffer reread = ReplayBuffer::read_jsonl(ss);
    std::size_t previous = 0;
    for (double t : {5.0, 20.0, 50.0, 100.0, 200.0, 1e9}) {
        const std::size_t expected = static_cast<std::size_t>(
            std::count_if(costs.begin(), costs.end(), [t](double c) { return c < t; }));
        const std::size_t got = filter_stable(reread, t).size();
        EXPECT_EQ(got, expected);
        EXPECT_GE(got, previous);
        previous = got;
    }
}

TEST(ReplayBuffer, RejectsInvalidSamples) {
    ReplayBuffer buf(2);
    EXPECT_THROW(buf.append(make_sample(ParamVector::original({0.0, 0.0}), -1.0, Phase::Phase1, 0, 0, "a")),
                 InvalidConfig);
    EXPECT_THROW(buf.append(make_sample(ParamVector::original({0.0, 0.0}), INFINITY, Phase::Phase1, 0, 0, "a")),
                 InvalidConfig);
    EXPECT_THROW(buf.append(make_sample(ParamVector::unit({0.0, 0.0}), 1.0, Phase::Phase1, 0, 0, "a")),
                 InvalidConfig);
    EXPECT_THROW(buf.append(make_sample(ParamVector::original({0.0}), 1.0, Phase::Phase1, 0, 0, "a")),
                 DimensionMismatch);
    buf.append(make_sample(ParamVector::original({0.0, 0.0}), 1.0, Phase::Phase1, 0, 0, "a"));
    EXPECT_THROW(buf.append(make_sample(ParamVector::original({0.0, 0.0}), 1.0, Phase::Phase1, 1, 0, "b")),
                 InvalidConfig);
    // A different environment is fine in the other phase (decoder reuse).
    EXPECT_NO_THROW(buf.append(make_sample(ParamVector::original({0.0, 0.0}), 1.0, Phase::Phase3, 0, 0, "b")));
}

TEST(ReplayBuffer, JsonlRoundTripIsBitIdentical) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(-1e3, 1e3);
    ReplayBuffer buf(4);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> th(4);
        for (auto& v : th) {
            v = unif(rng) / 3.0;
        }
        CostSample s = make_sample(ParamVector::original(th), std::abs(unif(rng)) / 7.0,
                                   i % 2 ? Phase::Phase3 : Phase::Phase1, i, rng(), "env");
        if (i % 2) {
            s.latent = std::vector<double>{1.0 / 3.0, 2.0 / 7.0};
        }
        buf.append(std::move(s));
    }
    const auto path = std::filesystem::temp_directory_path() / "latune_buffer_roundtrip.jsonl";
    buf.save(path);
    const ReplayBuffer back = ReplayBuffer::load(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.size(), buf.size());
    EXPECT_EQ(back.dim(), 4u);
    for (std::size_t i = 0; i < buf.size(); ++i) {
        EXPECT_EQ(back[i], buf[i]) << "sample " << i;
    }
}

TEST(ReplayBuffer, JsonlFieldNames) {
    ReplayBuffer buf(1);
    buf.append(make_sample(ParamVector::original({0.25}), 3.5, Phase::Phase1, 4, 9, "toy"));
    std::stringstream ss;
    buf.write_jsonl(ss);
    const std::string line = ss.str();
    for (const char* key : {"\"theta\"", "\"cost\"", "\"phase\"", "\"iteration\"", "\"seed\"", "\"env_id\"",
                            "\"stable\""}) {
        EXPECT_NE(line.find(key), std::string::npos) << key;
    }
    EXPECT_NE(line.find("\"phase1\""), std::string::npos);
}
