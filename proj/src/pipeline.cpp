#include "latune/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <Eigen/Core>

#include "latune/design.hpp"
#include "latune/errors.hpp"

namespace latune {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kPhase1Stream = 1ULL << 48;
constexpr std::uint64_t kVaeStream = 2ULL << 48;
constexpr std::uint64_t kPhase3Stream = 3ULL << 48;
constexpr std::uint64_t kEvalStream1 = 4ULL << 48;
constexpr std::uint64_t kEvalStream3 = 5ULL << 48;

std::uint64_t fnv1a(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex(fnv1a(ss.str()));
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create " + dir.string() + ": " + ec.message());
    }
}

void save_trace(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    write_trace_csv(out, trace);
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

const CostSample& best_of(const ReplayBuffer& buffer) {
    if (buffer.empty()) {
        throw EmptyResult("no samples were evaluated");
    }
    const CostSample* best = &buffer[0];
    for (const auto& s : buffer.samples()) {
        if (s.cost < best->cost) {
            best = &s;
        }
    }
    return *best;
}

json sample_summary(const CostSample& s) {
    json j = {{"cost", s.cost}, {"iteration", s.iteration}, {"seed", s.seed}, {"env_id", s.env_id},
              {"stable", s.stable}, {"theta", s.theta.values()}};
    if (s.latent) {
        j["latent"] = *s.latent;
    }
    return j;
}

}  // namespace

json turbo_config_to_json(const TurboConfig& c) {
    return {{"regions", c.regions},
            {"n_init_per_region", c.n_init_per_region},
            {"batch", c.batch},
            {"length_init", c.length_init},
            {"length_max", c.length_max},
            {"length_min", c.length_min},
            {"success_tolerance", c.success_tolerance},
            {"failure_tolerance", c.failure_tolerance},
            {"pool_size", c.pool_size},
            {"refit_interval", c.refit_interval},
            {"restart_regions", c.restart_regions},
            {"gp_iterations", c.gp.iterations},
            {"gp_restarts", c.gp.restarts},
            {"gp_learning_rate", c.gp.learning_rate}};
}

TurboConfig turbo_config_from_json(const json& j, TurboConfig c) {
    if (!j.is_object()) {
        throw InvalidConfig("turbo settings must be a JSON object");
    }
    c.regions = j.value("regions", c.regions);
    c.n_init_per_region = j.value("n_init_per_region", c.n_init_per_region);
    c.batch = j.value("batch", c.batch);
    c.length_init = j.value("length_init", c.length_init);
    c.length_max = j.value("length_max", c.length_max);
    c.length_min = j.value("length_min", c.length_min);
    c.success_tolerance = j.value("success_tolerance", c.success_tolerance);
    c.failure_tolerance = j.value("failure_tolerance", c.failure_tolerance);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.refit_interval = j.value("refit_interval", c.refit_interval);
    c.restart_regions = j.value("restart_regions", c.restart_regions);
    c.gp.iterations = j.value("gp_iterations", c.gp.iterations);
    c.gp.restarts = j.value("gp_restarts", c.gp.restarts);
    c.gp.learning_rate = j.value("gp_learning_rate", c.gp.learning_rate);
    return c;
}

// ---------------------------------------------------------------------------

TurboConfig RunConfig::turbo_for(Phase phase) const {
    TurboConfig c = phase == Phase::Phase1 ? phase1_turbo : phase3_turbo;
    c.regions = phase == Phase::Phase1 ? m_regions : phase3_regions.value_or(m_regions);
    return c;
}

void RunConfig::validate() const {
    if (m_regions < 1 || (phase3_regions && *phase3_regions < 1)) {
        throw InvalidConfig("m_regions and phase3_regions must be >= 1");
    }
    const auto env = make_environment(env_id);
    const std::size_t d_high = env->spec().dim;
    if (d_low < 1 || d_low >= d_high) {
        throw InvalidConfig("d_low must satisfy 1 <= d_low < " + std::to_string(d_high));
    }
    const auto target = make_environment(phase3_env());
    if (target->spec().dim != d_high) {
        throw DimensionMismatch(d_high, target->spec().dim);
    }
    const std::size_t design1 = m_regions * turbo_for(Phase::Phase1).resolved_n_init(d_high);
    if (phase1_budget < design1) {
        throw InvalidConfig("phase1_budget must be >= m_regions * n_init = " + std::to_string(design1));
    }
    const TurboConfig t3 = turbo_for(Phase::Phase3);
    const std::size_t design3 = t3.regions * t3.resolved_n_init(d_low);
    if (phase3_budget < design3) {
        throw InvalidConfig("phase3_budget must be >= regions * n_init = " + std::to_string(design3));
    }
    if (!(stability_threshold > 0.0)) {
        throw InvalidConfig("stability_threshold must be positive");
    }
}

json RunConfig::to_json() const {
    json j = {{"env_id", env_id},
              {"phase1_budget", phase1_budget},
              {"phase3_budget", phase3_budget},
              {"m_regions", m_regions},
              {"d_low", d_low},
              {"stability_threshold", stability_threshold},
              {"vae", vae.to_json()},
              {"master_seed", master_seed},
              {"out_dir", out_dir.string()},
              {"phase1_turbo", turbo_config_to_json(phase1_turbo)},
              {"phase3_turbo", turbo_config_to_json(phase3_turbo)}};
    if (warm_start_file) {
        j["warm_start_file"] = warm_start_file->string();
    }
    if (manual_theta_file) {
        j["manual_theta_file"] = manual_theta_file->string();
    }
    if (phase3_env_id) {
        j["phase3_env_id"] = *phase3_env_id;
    }
    if (phase3_regions) {
        j["phase3_regions"] = *phase3_regions;
    }
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) {
        throw InvalidConfig("run config must be a JSON object");
    }
    RunConfig c;
    try {
        c.env_id = j.value("env_id", c.env_id);
        c.phase1_budget = j.value("phase1_budget", c.phase1_budget);
        c.phase3_budget = j.value("phase3_budget", c.phase3_budget);
        c.m_regions = j.value("m_regions", c.m_regions);
        c.d_low = j.value("d_low", c.d_low);
        c.stability_threshold = j.value("stability_threshold", c.stability_threshold);
        if (j.contains("vae")) {
            c.vae = VaeTrainConfig::from_json(j.at("vae"));
        }
        c.master_seed = j.value("master_seed", c.master_seed);
        c.out_dir = j.value("out_dir", c.out_dir.string());
        if (j.contains("warm_start_file")) {
            c.warm_start_file = j.at("warm_start_file").get<std::string>();
        }
        if (j.contains("manual_theta_file")) {
            c.manual_theta_file = j.at("manual_theta_file").get<std::string>();
        }
        if (j.contains("phase3_env_id")) {
            c.phase3_env_id = j.at("phase3_env_id").get<std::string>();
        }
        if (j.contains("phase3_regions")) {
            c.phase3_regions = j.at("phase3_regions").get<std::size_t>();
        }
        if (j.contains("phase1_turbo")) {
            c.phase1_turbo = turbo_config_from_json(j.at("phase1_turbo"));
        }
        if (j.contains("phase3_turbo")) {
            c.phase3_turbo = turbo_config_from_json(j.at("phase3_turbo"));
        }
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("bad run config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidConfig("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidConfig("cannot parse " + path.string() + ": " + e.what());
    }
    RunConfig c = from_json(j);
    // Relative file references resolve against the config's directory.
    const auto base = path.parent_path();
    for (auto* p : {&c.warm_start_file, &c.manual_theta_file}) {
        if (*p && p->value().is_relative() && !std::filesystem::exists(p->value())) {
            *p = base / p->value();
        }
    }
    return c;
}

std::string config_hash(const RunConfig& config) { return hex(fnv1a(config.to_json().dump())); }

std::uint64_t evaluation_seed(std::uint64_t master_seed, Phase phase, std::int64_t iteration) {
    const std::uint64_t stream = phase == Phase::Phase1 ? kEvalStream1 : kEvalStream3;
    return derive_seed(master_seed, stream + static_cast<std::uint64_t>(iteration));
}

std::vector<std::vector<double>> load_theta_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidConfig("cannot open theta file " + path.string());
    }
    try {
        json j = json::parse(in);
        if (j.is_object()) {
            if (j.contains("thetas")) {
                j = j.at("thetas");
            } else if (j.contains("theta")) {
                j = j.at("theta");
            } else {
                throw InvalidConfig(path.string() + " has neither 'theta' nor 'thetas'");
            }
        }
        if (!j.is_array() || j.empty()) {
            throw InvalidConfig(path.string() + " holds no theta");
        }
        if (j.front().is_number()) {
            return {j.get<std::vector<double>>()};
        }
        return j.get<std::vector<std::vector<double>>>();
    } catch (const json::exception& e) {
        throw InvalidConfig("cannot read thetas from " + path.string() + ": " + e.what());
    }
}

double evaluate_theta(const std::string& env_id, const std::vector<double>& theta, std::uint64_t seed) {
    const auto env = make_environment(env_id);
    return env->evaluate(ParamVector::original(theta), seed).cost;
}

// ---------------------------------------------------------------------------

PhaseResult phase1(const RunConfig& config, bool persist) {
    config.validate();
    const auto env = make_environment(config.env_id);
    const EnvSpec& spec = env->spec();

    Eigen::MatrixXd warm;
    if (config.warm_start_file) {
        const auto thetas = load_theta_file(*config.warm_start_file);
        warm.resize(static_cast<Eigen::Index>(thetas.size()), static_cast<Eigen::Index>(spec.dim));
        for (std::size_t i = 0; i < thetas.size(); ++i) {
            const ParamVector u = normalize(ParamVector::original(thetas[i]), spec.bounds);
            warm.row(static_cast<Eigen::Index>(i)) = to_eigen(u.values()).transpose();
        }
    }

    PhaseResult result{ReplayBuffer(spec.dim), {}, {}};
    std::int64_t iteration = 0;
    const UnitObjective f = [&](const Eigen::VectorXd& u) {
        const ParamVector theta = denormalize(ParamVector::unit(to_std(u)), spec.bounds);
        const std::uint64_t seed = evaluation_seed(config.master_seed, Phase::Phase1, iteration);
        const double cost = env->evaluate(theta, seed).cost;
        result.buffer.append(make_sample(theta, cost, Phase::Phase1, iteration, seed, config.env_id,
                                         config.stability_threshold));
        ++iteration;
        return cost;
    };
    const TurboResult tr = run_turbo(f, spec.dim, config.phase1_budget, config.turbo_for(Phase::Phase1),
                                     derive_seed(config.master_seed, kPhase1Stream), warm);
    result.trace = tr.trace;
    result.best = best_of(result.buffer);
    if (persist) {
        ensure_dir(config.out_dir);
        result.buffer.save(config.out_dir / artifact::kPhase1Buffer);
        save_trace(config.out_dir / artifact::kPhase1Trace, result.trace);
    }
    return result;
}

PhaseTwoResult phase2(ReplayBuffer& buffer, const RunConfig& config, bool persist) {
    const auto env = make_environment(config.env_id);
    const EnvSpec& spec = env->spec();
    if (buffer.dim() != spec.dim) {
        throw DimensionMismatch(spec.dim, buffer.dim());
    }
    std::vector<ParamVector> stable;
    try {
        stable = filter_stable(buffer, config.stability_threshold);
    } catch (const EmptyResult&) {
        // reported below as too little data
    }
    if (stable.size() < 2 * config.vae.batch_size) {
        throw InsufficientData("only " + std::to_string(stable.size()) +
                               " stable samples; training needs " +
                               std::to_string(2 * config.vae.batch_size) +
                               " (run more phase-1 iterations or relax the threshold)");
    }
    Eigen::MatrixXd data(static_cast<Eigen::Index>(stable.size()), static_cast<Eigen::Index>(spec.dim));
    for (std::size_t i = 0; i < stable.size(); ++i) {
        data.row(static_cast<Eigen::Index>(i)) =
            to_eigen(normalize(stable[i], spec.bounds).values()).transpose();
    }
    VaeTrainConfig train = config.vae;
    train.seed = derive_seed(config.master_seed, kVaeStream + config.vae.seed);
    VaeTrainResult tr = train_vae(data, VaeArchitecture::standard(spec.dim, config.d_low), train);
    if (persist) {
        ensure_dir(config.out_dir);
        save_checkpoint(config.out_dir / artifact::kVae, tr.model, train);
    }
    return {std::move(tr.model), std::move(tr.report), stable.size()};
}

PhaseResult phase3(const VaeModel& model, const RunConfig& config, const std::string& target_env_id,
                   bool persist) {
    const auto env = make_environment(target_env_id);
    const EnvSpec& spec = env->spec();
    if (model.d_high() != spec.dim) {
        throw DimensionMismatch(spec.dim, model.d_high());
    }
    const std::size_t d_low = model.d_low();
    const TurboConfig tc = config.turbo_for(Phase::Phase3);
    if (config.phase3_budget < tc.regions * tc.resolved_n_init(d_low)) {
        throw InvalidConfig("phase3_budget is below the latent initial design");
    }

    PhaseResult result{ReplayBuffer(spec.dim), {}, {}};
    std::int64_t iteration = 0;
    const UnitObjective f = [&](const Eigen::VectorXd& z) {
        const Eigen::VectorXd u = model.decode(z).cwiseMax(0.0).cwiseMin(1.0);
        const ParamVector theta = denormalize(ParamVector::unit(to_std(u)), spec.bounds);
        const std::uint64_t seed = evaluation_seed(config.master_seed, Phase::Phase3, iteration);
        const double cost = env->evaluate(theta, seed).cost;
        CostSample s = make_sample(theta, cost, Phase::Phase3, iteration, seed, target_env_id,
                                   config.stability_threshold);
        s.latent = to_std(z);
        result.buffer.append(std::move(s));
        ++iteration;
        return cost;
    };
    // Random initialization only: no warm start in the latent box.
    const TurboResult tr = run_turbo(f, d_low, config.phase3_budget, tc,
                                     derive_seed(config.master_seed, kPhase3Stream));
    result.trace = tr.trace;
    result.best = best_of(result.buffer);
    if (persist) {
        ensure_dir(config.out_dir);
        result.buffer.save(config.out_dir / artifact::kPhase3Buffer);
        save_trace(config.out_dir / artifact::kPhase3Trace, result.trace);
    }
    return result;
}

PhaseResult phase3(const std::filesystem::path& checkpoint, const RunConfig& config,
                   const std::string& target_env_id, bool persist) {
    return phase3(load_checkpoint(checkpoint), config, target_env_id, persist);
}

ReconReport recon_check(const VaeModel& model, const std::string& env_id, const ReplayBuffer& heldout,
                        double threshold) {
    const auto env = make_environment(env_id);
    const EnvSpec& spec = env->spec();
    if (model.d_high() != spec.dim) {
        throw DimensionMismatch(spec.dim, model.d_high());
    }
    ReconReport report;
    for (const auto& s : heldout.samples()) {
        if (!(s.cost < threshold)) {
            continue;
        }
        const ParamVector u = normalize(s.theta, spec.bounds);
        const Eigen::VectorXd r = model.reconstruct(to_eigen(u.values())).cwiseMax(0.0).cwiseMin(1.0);
        const ParamVector theta = denormalize(ParamVector::unit(to_std(r)), spec.bounds);
        const double cost = env->evaluate(theta, s.seed).cost;
        report.stable_in += 1;
        if (cost < threshold) {
            report.stable_after += 1;
        }
        report.pairs.push_back({s.cost, cost});
    }
    return report;
}

void write_recon_csv(std::ostream& out, const ReconReport& report) {
    out << "original_cost,transformed_cost\n";
    const auto old_precision = out.precision(17);
    for (const auto& p : report.pairs) {
        out << p.original_cost << ',' << p.transformed_cost << '\n';
    }
    out.precision(old_precision);
}

// ---------------------------------------------------------------------------

void print_summary(std::ostream& out, const RunArtifacts& a) {
    const auto cell = [](std::optional<double> v) {
        if (!v) {
            return std::string("-");
        }
        std::ostringstream ss;
        ss << std::setprecision(6) << *v;
        return ss.str();
    };
    out << std::left << std::setw(14) << "" << std::setw(16) << "manual tuned" << std::setw(16)
        << "phase 1 best" << std::setw(16) << "phase 3 best" << '\n';
    out << std::setw(14) << "cost" << std::setw(16) << cell(a.manual_cost) << std::setw(16)
        << cell(a.phase1_best.cost) << std::setw(16) << cell(a.phase3_best.cost) << '\n';
    out << std::setw(14) << "evaluations" << std::setw(16) << (a.manual_cost ? "1" : "-")
        << std::setw(16) << a.phase1_evaluations << std::setw(16) << a.phase3_evaluations << '\n';
    out << std::right;
}

RunArtifacts run_all(const RunConfig& config, std::ostream* summary) {
    config.validate();
    ensure_dir(config.out_dir);
    RunArtifacts a;
    a.phase1_buffer = config.out_dir / artifact::kPhase1Buffer;
    a.phase1_trace = config.out_dir / artifact::kPhase1Trace;
    a.vae_checkpoint = config.out_dir / artifact::kVae;
    a.phase3_buffer = config.out_dir / artifact::kPhase3Buffer;
    a.phase3_trace = config.out_dir / artifact::kPhase3Trace;
    a.manifest = config.out_dir / artifact::kManifest;

    if (config.manual_theta_file) {
        const auto thetas = load_theta_file(*config.manual_theta_file);
        a.manual_cost = evaluate_theta(config.env_id, thetas.front(),
                                       evaluation_seed(config.master_seed, Phase::Phase1, 0));
    }

    PhaseResult p1 = phase1(config);
    a.phase1_best = p1.best;
    a.phase1_evaluations = p1.buffer.size();

    PhaseTwoResult p2 = phase2(p1.buffer, config);
    a.vae_report = p2.report;

    const PhaseResult p3 = phase3(p2.model, config, config.phase3_env());
    a.phase3_best = p3.best;
    a.phase3_evaluations = p3.buffer.size();

    json manifest = {
        {"tool", "latune"},
        {"versions",
         {{"latune", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}}},
        {"config", config.to_json()},
        {"config_hash", config_hash(config)},
        {"evaluations", {{"phase1", a.phase1_evaluations}, {"phase3", a.phase3_evaluations}}},
        {"stable_samples", p2.stable_count},
        {"vae",
         {{"best_epoch", p2.report.best_epoch},
          {"best_validation_loss", p2.report.best_validation_loss},
          {"validation_mse", p2.report.validation_mse}}},
        {"best", {{"phase1", sample_summary(a.phase1_best)}, {"phase3", sample_summary(a.phase3_best)}}},
        {"artifacts",
         {{"phase1_buffer", {{"file", artifact::kPhase1Buffer}, {"fnv1a", file_hash(a.phase1_buffer)}}},
          {"phase1_trace", {{"file", artifact::kPhase1Trace}, {"fnv1a", file_hash(a.phase1_trace)}}},
          {"vae", {{"file", artifact::kVae}, {"fnv1a", file_hash(a.vae_checkpoint)}}},
          {"phase3_buffer", {{"file", artifact::kPhase3Buffer}, {"fnv1a", file_hash(a.phase3_buffer)}}},
          {"phase3_trace", {{"file", artifact::kPhase3Trace}, {"fnv1a", file_hash(a.phase3_trace)}}}}}};
    if (a.manual_cost) {
        manifest["manual_cost"] = *a.manual_cost;
    }
    std::ofstream out(a.manifest);
    if (!out) {
        throw Error("cannot open " + a.manifest.string() + " for writing");
    }
    out << manifest.dump(2) << '\n';

    if (summary) {
        print_summary(*summary, a);
    }
    return a;
}

}  // namespace latune
