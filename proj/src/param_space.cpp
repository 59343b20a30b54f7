#include "latune/param_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "latune/errors.hpp"

namespace latune {

using nlohmann::json;

Bounds::Bounds(std::vector<double> lower, std::vector<double> upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size()) {
        throw DimensionMismatch(lower_.size(), upper_.size());
    }
    if (lower_.empty()) {
        throw InvalidConfig("bounds must have at least one dimension");
    }
    for (std::size_t i = 0; i < lower_.size(); ++i) {
        if (!(lower_[i] < upper_[i]) || !std::isfinite(lower_[i]) || !std::isfinite(upper_[i])) {
            throw InvalidConfig("bounds require finite lower < upper at index " + std::to_string(i));
        }
    }
}

Bounds Bounds::uniform(std::size_t dim, double lo, double hi) {
    return {std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
}

bool Bounds::contains(std::span<const double> theta) const {
    if (theta.size() != dim()) {
        return false;
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (!(theta[i] >= lower_[i] && theta[i] <= upper_[i])) {
            return false;
        }
    }
    return true;
}

ParamVector::ParamVector(std::vector<double> values, Space space)
    : values_(std::move(values)), space_(space) {
    if (space_ == Space::Original) {
        return;
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!(values_[i] >= 0.0 && values_[i] <= 1.0)) {
            throw OutOfUnitBox(i, values_[i]);
        }
    }
}

ParamVector normalize(const ParamVector& theta, const Bounds& bounds) {
    if (theta.space() != Space::Original) {
        throw InvalidConfig("normalize expects an original-space vector");
    }
    if (theta.size() != bounds.dim()) {
        throw DimensionMismatch(bounds.dim(), theta.size());
    }
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double v = theta[i];
        if (!(v >= bounds.lower()[i] && v <= bounds.upper()[i])) {
            throw OutOfBounds(i, v);
        }
        // The input is in the box, so clamping only absorbs round-off.
        out[i] = std::clamp((v - bounds.lower()[i]) / bounds.width(i), 0.0, 1.0);
    }
    return ParamVector::unit(std::move(out));
}

ParamVector denormalize(const ParamVector& u, const Bounds& bounds) {
    if (u.space() != Space::Unit) {
        throw InvalidConfig("denormalize expects a unit-box vector");
    }
    if (u.size() != bounds.dim()) {
        throw DimensionMismatch(bounds.dim(), u.size());
    }
    std::vector<double> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double v = u[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            throw OutOfUnitBox(i, v);
        }
        out[i] = std::clamp(bounds.lower()[i] + v * bounds.width(i), bounds.lower()[i],
                            bounds.upper()[i]);
    }
    return ParamVector::original(std::move(out));
}

std::string to_string(Phase phase) {
    return phase == Phase::Phase1 ? "phase1" : "phase3";
}

Phase phase_from_string(const std::string& s) {
    if (s == "phase1") {
        return Phase::Phase1;
    }
    if (s == "phase3") {
        return Phase::Phase3;
    }
    throw InvalidConfig("unknown phase '" + s + "'");
}

CostSample make_sample(ParamVector theta, double cost, Phase phase, std::int64_t iteration,
                       std::uint64_t seed, std::string env_id, double threshold) {
    CostSample s;
    s.theta = std::move(theta);
    s.cost = cost;
    s.phase = phase;
    s.iteration = iteration;
    s.seed = seed;
    s.env_id = std::move(env_id);
    s.stable = cost < threshold;
    return s;
}

void ReplayBuffer::append(CostSample sample) {
    if (!std::isfinite(sample.cost) || sample.cost < 0.0) {
        throw InvalidConfig("sample cost must be finite and non-negative");
    }
    if (sample.theta.space() != Space::Original) {
        throw InvalidConfig("replay buffer stores thetas in the original space");
    }
    if (samples_.empty() && dim_ == 0) {
        dim_ = sample.theta.size();
    }
    if (sample.theta.size() != dim_) {
        throw DimensionMismatch(dim_, sample.theta.size());
    }
    auto& env = phase_env_[sample.phase == Phase::Phase1 ? 0 : 1];
    if (!env) {
        env = sample.env_id;
    } else if (*env != sample.env_id) {
        throw InvalidConfig("env_id '" + sample.env_id + "' differs from buffer env_id '" + *env +
                            "' within " + to_string(sample.phase));
    }
    samples_.push_back(std::move(sample));
}

void ReplayBuffer::mark_stable(double threshold) {
    for (auto& s : samples_) {
        s.stable = s.cost < threshold;
    }
}

namespace {

json to_json(const CostSample& s) {
    json j;
    j["theta"] = s.theta.values();
    j["cost"] = s.cost;
    j["phase"] = to_string(s.phase);
    j["iteration"] = s.iteration;
    j["seed"] = s.seed;
    j["env_id"] = s.env_id;
    j["stable"] = s.stable;
    if (s.latent) {
        j["latent"] = *s.latent;
    }
    return j;
}

CostSample from_json(const json& j) {
    CostSample s;
    s.theta = ParamVector::original(j.at("theta").get<std::vector<double>>());
    s.cost = j.at("cost").get<double>();
    s.phase = phase_from_string(j.at("phase").get<std::string>());
    s.iteration = j.at("iteration").get<std::int64_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.env_id = j.at("env_id").get<std::string>();
    s.stable = j.at("stable").get<bool>();
    if (j.contains("latent")) {
        s.latent = j.at("latent").get<std::vector<double>>();
    }
    return s;
}

}  // namespace

void ReplayBuffer::write_jsonl(std::ostream& out) const {
    for (const auto& s : samples_) {
        out << to_json(s).dump() << '\n';
    }
}

void ReplayBuffer::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    write_jsonl(out);
}

ReplayBuffer ReplayBuffer::read_jsonl(std::istream& in) {
    ReplayBuffer buffer;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        buffer.append(from_json(json::parse(line)));
    }
    return buffer;
}

ReplayBuffer ReplayBuffer::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    return read_jsonl(in);
}

std::vector<ParamVector> filter_stable(ReplayBuffer& buffer, double threshold) {
    if (buffer.empty()) {
        throw EmptyResult("replay buffer is empty");
    }
    buffer.mark_stable(threshold);
    std::vector<ParamVector> out;
    for (const auto& s : buffer.samples()) {
        if (s.stable) {
            out.push_back(s.theta);
        }
    }
    if (out.empty()) {
        throw EmptyResult("no sample has cost below " + std::to_string(threshold));
    }
    return out;
}

}  // namespace latune
