#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace latune {

// Default stability threshold: a sample is stable when its cost is strictly below it.
inline constexpr double kDefaultStabilityThreshold = 100.0;

// Box constraints of a parameter space, in engineering units.
class Bounds {
public:
    Bounds(std::vector<double> lower, std::vector<double> upper);

    // Same interval [lo, hi] on every one of `dim` coordinates.
    static Bounds uniform(std::size_t dim, double lo, double hi);
    static Bounds unit(std::size_t dim) { return uniform(dim, 0.0, 1.0); }

    [[nodiscard]] std::size_t dim() const { return lower_.size(); }
    [[nodiscard]] const std::vector<double>& lower() const { return lower_; }
    [[nodiscard]] const std::vector<double>& upper() const { return upper_; }
    [[nodiscard]] double width(std::size_t i) const { return upper_[i] - lower_[i]; }
    [[nodiscard]] bool contains(std::span<const double> theta) const;

    bool operator==(const Bounds&) const = default;

private:
    std::vector<double> lower_;
    std::vector<double> upper_;
};

enum class Space { Original, Unit, Latent };

// A parameter vector tagged with the space it lives in. Unit and Latent
// vectors are checked to lie in [0, 1] on construction.
class ParamVector {
public:
    ParamVector() = default;
    ParamVector(std::vector<double> values, Space space);

    static ParamVector original(std::vector<double> values) {
        return {std::move(values), Space::Original};
    }
    static ParamVector unit(std::vector<double> values) { return {std::move(values), Space::Unit}; }
    static ParamVector latent(std::vector<double> values) {
        return {std::move(values), Space::Latent};
    }

    [[nodiscard]] std::size_t size() const { return values_.size(); }
    [[nodiscard]] Space space() const { return space_; }
    [[nodiscard]] const std::vector<double>& values() const { return values_; }
    [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }

    bool operator==(const ParamVector&) const = default;

private:
    std::vector<double> values_;
    Space space_ = Space::Original;
};

// Maps an in-bounds vector onto the unit box. Values outside the box are an
// error, never clamped.
ParamVector normalize(const ParamVector& theta, const Bounds& bounds);

// Inverse of normalize.
ParamVector denormalize(const ParamVector& u, const Bounds& bounds);

enum class Phase { Phase1, Phase3 };

std::string to_string(Phase phase);
Phase phase_from_string(const std::string& s);

// One evaluated parameter vector. Phase-3 samples also carry the latent
// point that was decoded into `theta`.
struct CostSample {
    ParamVector theta;
    double cost = 0.0;
    Phase phase = Phase::Phase1;
    std::int64_t iteration = 0;
    std::uint64_t seed = 0;
    std::string env_id;
    bool stable = false;
    std::optional<std::vector<double>> latent;

    bool operator==(const CostSample&) const = default;
};

// Builds a sample whose stable flag follows `cost < threshold`.
CostSample make_sample(ParamVector theta, double cost, Phase phase, std::int64_t iteration,
                       std::uint64_t seed, std::string env_id,
                       double threshold = kDefaultStabilityThreshold);

// Append-only record of evaluated samples, persisted as JSON Lines.
class ReplayBuffer {
public:
    ReplayBuffer() = default;
    explicit ReplayBuffer(std::size_t dim) : dim_(dim) {}

    // Rejects non-finite or negative costs, non-Original thetas, and a
    // dimension or env_id that differs from the samples already held.
    void append(CostSample sample);

    // Re-derives every stable flag from `threshold`.
    void mark_stable(double threshold);

    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::size_t size() const { return samples_.size(); }
    [[nodiscard]] bool empty() const { return samples_.empty(); }
    [[nodiscard]] const std::vector<CostSample>& samples() const { return samples_; }
    [[nodiscard]] const CostSample& operator[](std::size_t i) const { return samples_[i]; }

    void write_jsonl(std::ostream& out) const;
    void save(const std::filesystem::path& path) const;
    static ReplayBuffer read_jsonl(std::istream& in);
    static ReplayBuffer load(const std::filesystem::path& path);

private:
    std::size_t dim_ = 0;
    std::vector<CostSample> samples_;
    std::array<std::optional<std::string>, 2> phase_env_;
};

// Returns the thetas whose cost is strictly below `threshold`, in buffer
// order, and marks those samples stable. Throws EmptyResult when none pass.
std::vector<ParamVector> filter_stable(ReplayBuffer& buffer, double threshold);

}  // namespace latune
