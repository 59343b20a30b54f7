#include "latune/test_functions.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "latune/design.hpp"
#include "latune/errors.hpp"

namespace latune {

double ackley(const Eigen::VectorXd& x) {
    const double n = static_cast<double>(x.size());
    const double a = std::sqrt(x.squaredNorm() / n);
    const double c = (2.0 * M_PI * x.array()).cos().sum() / n;
    // Clamp the round-off that leaves ackley(0) at ~4e-16.
    return std::max(0.0, -20.0 * std::exp(-0.2 * a) - std::exp(c) + 20.0 + std::exp(1.0));
}

double rastrigin(const Eigen::VectorXd& x) {
    return 10.0 * static_cast<double>(x.size()) +
           (x.array().square() - 10.0 * (2.0 * M_PI * x.array()).cos()).sum();
}

double sphere(const Eigen::VectorXd& x) { return x.squaredNorm(); }

UnitObjective TestFunction::unit_objective() const {
    return [b = bounds, fn = f](const Eigen::VectorXd& u) {
        const auto lo = Eigen::Map<const Eigen::VectorXd>(b.lower().data(), static_cast<Eigen::Index>(b.dim()));
        const auto hi = Eigen::Map<const Eigen::VectorXd>(b.upper().data(), static_cast<Eigen::Index>(b.dim()));
        const Eigen::VectorXd x = lo.array() + u.array() * (hi - lo).array();
        return fn(x);
    };
}

TestFunction make_test_function(const std::string& name, std::size_t dim) {
    if (dim == 0) {
        throw InvalidConfig("test function dimension must be positive");
    }
    TestFunction t;
    t.name = name;
    t.bounds = Bounds::uniform(dim, -5.0, 10.0);
    if (name == "ackley") {
        t.f = ackley;
    } else if (name == "rastrigin") {
        t.f = rastrigin;
    } else if (name == "sphere") {
        t.f = sphere;
    } else {
        throw InvalidConfig("unknown test function '" + name + "'");
    }
    return t;
}

TurboResult random_search(const UnitObjective& f, std::size_t dim, std::size_t budget,
                          std::uint64_t seed) {
    if (budget == 0) {
        throw InvalidConfig("random search budget must be positive");
    }
    Rng rng(seed);
    const Eigen::MatrixXd pts = uniform_points(budget, dim, rng);
    TurboResult out;
    for (std::size_t i = 0; i < budget; ++i) {
        Evaluation e;
        e.x = pts.row(static_cast<Eigen::Index>(i)).transpose();
        e.cost = f(e.x);
        e.iteration = static_cast<std::int64_t>(i);
        if (i == 0 || e.cost < out.best.cost) {
            out.best = e;
        }
        out.trace.push_back({e.iteration, e.cost, out.best.cost, 0, 0.0});
        out.evaluations.push_back(std::move(e));
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) {
        throw EmptyResult("median of an empty set");
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

BenchSummary run_bench(const TestFunction& fn, std::size_t budget, std::size_t seeds,
                       const TurboConfig& config, std::uint64_t first_seed) {
    BenchSummary s;
    std::vector<double> tb;
    std::vector<double> rb;
    const auto f = fn.unit_objective();
    const std::size_t dim = fn.bounds.dim();
    for (std::size_t k = 0; k < seeds; ++k) {
        const std::uint64_t seed = first_seed + k;
        BenchRow row;
        row.seed = seed;
        TurboResult t = run_turbo(f, dim, budget, config, seed);
        TurboResult r = random_search(f, dim, budget, seed);
        row.turbo_best = t.best.cost;
        row.random_best = r.best.cost;
        row.turbo_trace = std::move(t.trace);
        row.random_trace = std::move(r.trace);
        tb.push_back(row.turbo_best);
        rb.push_back(row.random_best);
        s.rows.push_back(row);
    }
    s.turbo_median = median(tb);
    s.random_median = median(rb);
    return s;
}

}  // namespace latune
