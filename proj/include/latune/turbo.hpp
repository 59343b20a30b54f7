#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "latune/gp.hpp"

namespace latune {

// Trust-region BO settings. Zero-valued sizes select the dimension-dependent
// defaults documented on each field.
struct TurboConfig {
    std::size_t regions = 10;
    // 0 -> min(2 * dim, 20).
    std::size_t n_init_per_region = 0;
    std::size_t batch = 1;
    double length_init = 0.8;
    double length_max = 1.6;
    double length_min = 0.0078125;  // 0.5^7
    std::size_t success_tolerance = 3;
    // 0 -> max(4, ceil(dim / batch)).
    std::size_t failure_tolerance = 0;
    // Thompson-sampling pool per region; 0 -> min(100 * dim, 5000).
    std::size_t pool_size = 0;
    // Hyperparameters are re-optimized every this many region observations;
    // in between the posterior is re-conditioned with the previous ones.
    std::size_t refit_interval = 1;
    bool restart_regions = true;
    GpFitConfig gp;

    [[nodiscard]] std::size_t resolved_n_init(std::size_t dim) const;
    [[nodiscard]] std::size_t resolved_failure_tolerance(std::size_t dim) const;
    [[nodiscard]] std::size_t resolved_pool_size(std::size_t dim) const;
};

struct TrustRegion {
    Eigen::VectorXd center;
    double side_length = 0.0;
    std::size_t success_count = 0;
    std::size_t failure_count = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd x;
    std::vector<double> y;
    // Incremented on every restart; stale suggestions are not fed back.
    std::size_t epoch = 0;
    bool retired = false;

    std::optional<GpModel> gp;
    std::optional<KernelParams> params;
    std::size_t observations_since_fit = 0;

    [[nodiscard]] std::size_t size() const { return y.size(); }
    [[nodiscard]] bool active() const { return !retired && !y.empty(); }
};

struct Candidate {
    Eigen::VectorXd x;
    std::size_t region = 0;
    std::size_t epoch = 0;
    bool design = false;
    // Thompson draw that selected the candidate; NaN for design points.
    double sampled_value = std::numeric_limits<double>::quiet_NaN();
};

struct Evaluation {
    Eigen::VectorXd x;
    double cost = std::numeric_limits<double>::infinity();
    std::size_t region = 0;
    std::int64_t iteration = 0;
};

struct TraceRow {
    std::int64_t iteration = 0;
    double eval_cost = 0.0;
    double best_cost_so_far = 0.0;
    std::size_t region_id = 0;
    double side_length = 0.0;
};

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

// One Thompson draw of a candidate pool.
struct PoolDraw {
    double value = 0.0;
    std::size_t region = 0;
    std::size_t index = 0;
};

// Positions of the `batch` lowest draws; ties go to the lowest region, then
// the lowest candidate index.
std::vector<std::size_t> select_lowest(const std::vector<PoolDraw>& draws, std::size_t batch);

// Axis-aligned box of a region, already clipped to the unit cube.
struct RegionBox {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

// Multi-region trust-region Bayesian optimization over the unit box
// (minimization). Construction seeds every region with a Latin-hypercube
// design that must be evaluated before suggest() may be called.
class TurboOptimizer {
public:
    TurboOptimizer(std::size_t dim, TurboConfig config, std::uint64_t seed);

    // Extra initial points (e.g. hand-tuned settings), assigned to regions
    // round-robin and evaluated with the design.
    void add_initial_points(const Eigen::MatrixXd& points);

    [[nodiscard]] bool has_pending_design() const;
    [[nodiscard]] std::vector<Candidate> pending_design() const;

    // Draws one joint posterior sample per active region over a candidate
    // pool inside its box and returns the `batch` lowest draws of the union.
    std::vector<Candidate> suggest(std::size_t batch);

    // Feeds back the cost of a point previously returned by the design or
    // suggest(). Throws UnknownCandidate otherwise.
    void observe(const Eigen::VectorXd& x, double cost);

    [[nodiscard]] RegionBox region_box(std::size_t region) const;

    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] const TurboConfig& config() const { return config_; }
    [[nodiscard]] const std::vector<TrustRegion>& regions() const { return regions_; }
    [[nodiscard]] const std::optional<Evaluation>& global_best() const { return best_; }
    [[nodiscard]] std::int64_t eval_count() const { return eval_count_; }
    [[nodiscard]] const std::vector<TraceRow>& trace() const { return trace_; }
    [[nodiscard]] std::size_t n_init() const { return n_init_; }
    [[nodiscard]] std::size_t failure_tolerance() const { return failure_tolerance_; }

private:
    void seed_region(std::size_t r);
    void refresh_model(TrustRegion& region, std::uint64_t seed);
    void restart_region(std::size_t r);

    std::size_t dim_;
    TurboConfig config_;
    std::uint64_t seed_;
    std::size_t n_init_;
    std::size_t failure_tolerance_;
    std::vector<TrustRegion> regions_;
    std::vector<Candidate> outstanding_;
    std::optional<Evaluation> best_;
    std::int64_t eval_count_ = 0;
    std::uint64_t suggest_calls_ = 0;
    std::uint64_t design_draws_ = 0;
    std::vector<TraceRow> trace_;
};

// Objective over the unit box.
using UnitObjective = std::function<double(const Eigen::VectorXd&)>;

struct TurboResult {
    Evaluation best;
    std::vector<TraceRow> trace;
    std::vector<Evaluation> evaluations;
};

// Evaluates the initial design, then alternates suggest / evaluate / observe
// until exactly `budget` evaluations are spent. Objective exceptions are
// rethrown as EvaluationError carrying the offending point.
TurboResult run_turbo(const UnitObjective& f, std::size_t dim, std::size_t budget,
                      const TurboConfig& config, std::uint64_t seed,
                      const Eigen::MatrixXd& initial_points = {});

}  // namespace latune
