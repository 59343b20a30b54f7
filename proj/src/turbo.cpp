#include "latune/turbo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <tuple>

#include "latune/design.hpp"
#include "latune/errors.hpp"

namespace latune {

namespace {

// Streams for derive_seed so independent draws never share a seed.
constexpr std::uint64_t kDesignStream = 1ULL << 40;
constexpr std::uint64_t kSuggestStream = 2ULL << 40;

void append_row(Eigen::MatrixXd& m, const Eigen::VectorXd& row) {
    m.conservativeResize(m.rows() + 1, row.size());
    m.row(m.rows() - 1) = row.transpose();
}

}  // namespace

std::size_t TurboConfig::resolved_n_init(std::size_t dim) const {
    return n_init_per_region != 0 ? n_init_per_region : std::min<std::size_t>(2 * dim, 20);
}

std::size_t TurboConfig::resolved_failure_tolerance(std::size_t dim) const {
    if (failure_tolerance != 0) {
        return failure_tolerance;
    }
    return std::max<std::size_t>(4, (dim + batch - 1) / batch);
}

std::size_t TurboConfig::resolved_pool_size(std::size_t dim) const {
    return pool_size != 0 ? pool_size : std::min<std::size_t>(100 * dim, 5000);
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
    out << "iteration,eval_cost,best_cost_so_far,region_id,side_length\n";
    const auto old_precision = out.precision(17);
    for (const auto& row : trace) {
        out << row.iteration << ',' << row.eval_cost << ',' << row.best_cost_so_far << ','
            << row.region_id << ',' << row.side_length << '\n';
    }
    out.precision(old_precision);
}

std::vector<std::size_t> select_lowest(const std::vector<PoolDraw>& draws, std::size_t batch) {
    std::vector<std::size_t> pos(draws.size());
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    const std::size_t take = std::min(batch, draws.size());
    std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(take), pos.end(),
                      [&](std::size_t a, std::size_t b) {
                          return std::tie(draws[a].value, draws[a].region, draws[a].index) <
                                 std::tie(draws[b].value, draws[b].region, draws[b].index);
                      });
    pos.resize(take);
    return pos;
}

TurboOptimizer::TurboOptimizer(std::size_t dim, TurboConfig config, std::uint64_t seed)
    : dim_(dim), config_(config), seed_(seed) {
    if (dim_ < 1 || config_.regions < 1 || config_.batch < 1) {
        throw InvalidConfig("turbo needs dim >= 1, regions >= 1 and batch >= 1");
    }
    n_init_ = config_.resolved_n_init(dim_);
    if (n_init_ < 2) {
        throw InvalidConfig("turbo needs at least 2 initial points per region");
    }
    if (!(config_.length_min > 0.0 && config_.length_min <= config_.length_init &&
          config_.length_init <= config_.length_max)) {
        throw InvalidConfig("turbo side lengths must satisfy 0 < min <= init <= max");
    }
    if (config_.success_tolerance < 1 || config_.refit_interval < 1) {
        throw InvalidConfig("turbo tolerances and refit interval must be >= 1");
    }
    failure_tolerance_ = config_.resolved_failure_tolerance(dim_);
    regions_.resize(config_.regions);
    for (std::size_t r = 0; r < regions_.size(); ++r) {
        seed_region(r);
    }
}

void TurboOptimizer::seed_region(std::size_t r) {
    auto& region = regions_[r];
    region.center = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim_), 0.5);
    region.side_length = config_.length_init;
    region.success_count = 0;
    region.failure_count = 0;
    region.best_cost = std::numeric_limits<double>::infinity();
    region.x.resize(0, static_cast<Eigen::Index>(dim_));
    region.y.clear();
    region.gp.reset();
    region.params.reset();
    region.observations_since_fit = 0;

    Rng rng(derive_seed(seed_, kDesignStream + design_draws_++));
    const Eigen::MatrixXd design = latin_hypercube(n_init_, dim_, rng);
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
        outstanding_.push_back({design.row(i).transpose(), r, region.epoch, true});
    }
}

void TurboOptimizer::restart_region(std::size_t r) {
    auto& region = regions_[r];
    region.epoch += 1;
    if (!config_.restart_regions) {
        region.retired = true;
        return;
    }
    seed_region(r);
}

void TurboOptimizer::add_initial_points(const Eigen::MatrixXd& points) {
    if (points.size() == 0) {
        return;
    }
    if (static_cast<std::size_t>(points.cols()) != dim_) {
        throw DimensionMismatch(dim_, static_cast<std::size_t>(points.cols()));
    }
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        for (Eigen::Index j = 0; j < points.cols(); ++j) {
            if (!(points(i, j) >= 0.0 && points(i, j) <= 1.0)) {
                throw OutOfUnitBox(static_cast<std::size_t>(j), points(i, j));
            }
        }
        const std::size_t r = static_cast<std::size_t>(i) % regions_.size();
        outstanding_.push_back({points.row(i).transpose(), r, regions_[r].epoch, true});
    }
}

bool TurboOptimizer::has_pending_design() const {
    return std::any_of(outstanding_.begin(), outstanding_.end(),
                       [](const Candidate& c) { return c.design; });
}

std::vector<Candidate> TurboOptimizer::pending_design() const {
    std::vector<Candidate> out;
    std::copy_if(outstanding_.begin(), outstanding_.end(), std::back_inserter(out),
                 [](const Candidate& c) { return c.design; });
    return out;
}

void TurboOptimizer::refresh_model(TrustRegion& region, std::uint64_t seed) {
    const Eigen::Map<const Eigen::VectorXd> y(region.y.data(),
                                              static_cast<Eigen::Index>(region.y.size()));
    const bool stale = !region.gp || region.gp->size() != region.size();
    if (!region.params || region.observations_since_fit >= config_.refit_interval) {
        const KernelParams init =
            region.params ? *region.params : KernelParams::isotropic(dim_, 0.5, 1.0, 1e-4);
        GpFitConfig fit_config = config_.gp;
        fit_config.seed = seed;
        region.gp = GpModel::fit(region.x, y, init, fit_config);
        region.params = region.gp->params();
        region.observations_since_fit = 0;
    } else if (stale) {
        region.gp = GpModel::condition(region.x, y, *region.params);
    }
}

RegionBox TurboOptimizer::region_box(std::size_t r) const {
    const auto& region = regions_.at(r);
    Eigen::VectorXd weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dim_));
    if (region.params) {
        const Eigen::VectorXd ls = region.params->lengthscales();
        // Normalize so the weights have unit geometric mean.
        weights = ls / std::exp(ls.array().log().mean());
    }
    const Eigen::VectorXd half = 0.5 * region.side_length * weights;
    return {(region.center - half).cwiseMax(0.0), (region.center + half).cwiseMin(1.0)};
}

std::vector<Candidate> TurboOptimizer::suggest(std::size_t batch) {
    if (batch < 1) {
        throw InvalidConfig("suggest needs batch >= 1");
    }
    if (has_pending_design()) {
        throw InvalidConfig("initial design points must be evaluated before suggest");
    }
    const std::uint64_t call_seed = derive_seed(seed_, kSuggestStream + suggest_calls_++);
    const std::size_t pool_size = config_.resolved_pool_size(dim_);
    const double perturb_prob = std::min(20.0 / static_cast<double>(dim_), 1.0);

    std::vector<PoolDraw> draws;
    std::vector<Eigen::VectorXd> points;
    for (std::size_t r = 0; r < regions_.size(); ++r) {
        auto& region = regions_[r];
        if (!region.active()) {
            continue;
        }
        // Every region uses the same per-call stream, so regions with equal
        // data draw equal samples and ties fall to the lowest index.
        refresh_model(region, derive_seed(call_seed, 0));
        const RegionBox box = region_box(r);

        Rng rng(derive_seed(call_seed, 1));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::uniform_int_distribution<Eigen::Index> pick_dim(0, static_cast<Eigen::Index>(dim_) - 1);
        const Eigen::MatrixXd raw = latin_hypercube(pool_size, dim_, rng);
        Eigen::MatrixXd pool(raw.rows(), raw.cols());
        for (Eigen::Index i = 0; i < pool.rows(); ++i) {
            bool any = false;
            for (Eigen::Index j = 0; j < pool.cols(); ++j) {
                if (unif(rng) < perturb_prob) {
                    pool(i, j) = box.lower(j) + raw(i, j) * (box.upper(j) - box.lower(j));
                    any = true;
                } else {
                    pool(i, j) = region.center(j);
                }
            }
            if (!any) {
                const Eigen::Index j = pick_dim(rng);
                pool(i, j) = box.lower(j) + raw(i, j) * (box.upper(j) - box.lower(j));
            }
        }

        const Eigen::MatrixXd sample = region.gp->sample_posterior(pool, derive_seed(call_seed, 2), 1);
        for (Eigen::Index i = 0; i < pool.rows(); ++i) {
            draws.push_back({sample(0, i), r, static_cast<std::size_t>(i)});
            points.push_back(pool.row(i).transpose());
        }
    }
    if (draws.empty()) {
        throw NoActiveRegions("no trust region is active");
    }
    std::vector<Candidate> out;
    for (const std::size_t k : select_lowest(draws, batch)) {
        const std::size_t r = draws[k].region;
        Candidate c{points[k], r, regions_[r].epoch, false, draws[k].value};
        outstanding_.push_back(c);
        out.push_back(std::move(c));
    }
    return out;
}

void TurboOptimizer::observe(const Eigen::VectorXd& x, double cost) {
    const auto it = std::find_if(outstanding_.begin(), outstanding_.end(),
                                 [&](const Candidate& c) { return c.x == x; });
    if (it == outstanding_.end()) {
        throw UnknownCandidate("observed point was not produced by the design or suggest()");
    }
    const Candidate cand = *it;
    outstanding_.erase(it);
    if (!std::isfinite(cost)) {
        throw InvalidConfig("observed cost must be finite");
    }

    eval_count_ += 1;
    auto& region = regions_[cand.region];
    if (cand.epoch == region.epoch && !region.retired) {
        append_row(region.x, x);
        region.y.push_back(cost);
        region.observations_since_fit += 1;
        const bool improved = cost < region.best_cost;
        if (improved) {
            region.best_cost = cost;
            region.center = x;
        }
        if (!cand.design) {
            if (improved) {
                region.success_count += 1;
                region.failure_count = 0;
            } else {
                region.failure_count += 1;
                region.success_count = 0;
            }
            if (region.success_count >= config_.success_tolerance) {
                region.side_length = std::min(2.0 * region.side_length, config_.length_max);
                region.success_count = 0;
            }
            if (region.failure_count >= failure_tolerance_) {
                region.side_length /= 2.0;
                region.failure_count = 0;
            }
        }
    }

    if (!best_ || cost < best_->cost) {
        best_ = Evaluation{x, cost, cand.region, eval_count_};
    }
    trace_.push_back({eval_count_, cost, best_->cost, cand.region, region.side_length});

    if (region.side_length < config_.length_min && !region.retired) {
        restart_region(cand.region);
    }
}

TurboResult run_turbo(const UnitObjective& f, std::size_t dim, std::size_t budget,
                      const TurboConfig& config, std::uint64_t seed,
                      const Eigen::MatrixXd& initial_points) {
    TurboOptimizer opt(dim, config, seed);
    opt.add_initial_points(initial_points);
    const std::size_t design_size = opt.pending_design().size();
    if (budget < config.regions * opt.n_init()) {
        throw InvalidConfig("budget " + std::to_string(budget) + " is below the initial design of " +
                            std::to_string(design_size) + " points");
    }

    TurboResult result;
    result.evaluations.reserve(budget);
    auto evaluate = [&](const Candidate& c) {
        double cost = 0.0;
        try {
            cost = f(c.x);
        } catch (const std::exception& e) {
            throw EvaluationError(std::vector<double>(c.x.data(), c.x.data() + c.x.size()), e.what());
        }
        if (!std::isfinite(cost)) {
            throw EvaluationError(std::vector<double>(c.x.data(), c.x.data() + c.x.size()),
                                  "objective returned a non-finite cost");
        }
        opt.observe(c.x, cost);
        result.evaluations.push_back({c.x, cost, c.region, opt.eval_count()});
    };

    while (static_cast<std::size_t>(opt.eval_count()) < budget) {
        const std::size_t remaining = budget - static_cast<std::size_t>(opt.eval_count());
        std::vector<Candidate> batch =
            opt.has_pending_design() ? opt.pending_design() : opt.suggest(std::min(config.batch, remaining));
        if (batch.size() > remaining) {
            batch.resize(remaining);
        }
        for (const auto& c : batch) {
            evaluate(c);
        }
    }
    result.best = *opt.global_best();
    result.trace = opt.trace();
    return result;
}

}  // namespace latune
