#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latune/environments.hpp"
#include "latune/param_space.hpp"
#include "latune/turbo.hpp"
#include "latune/vae.hpp"

namespace latune {

inline constexpr const char* kVersion = "0.1.0";

nlohmann::json turbo_config_to_json(const TurboConfig& c);
// Missing keys keep the values of `base`.
TurboConfig turbo_config_from_json(const nlohmann::json& j, TurboConfig base = {});

struct RunConfig {
    std::string env_id = "synthetic77";
    std::size_t phase1_budget = 2000;
    std::size_t phase3_budget = 220;
    std::size_t m_regions = 10;
    std::size_t d_low = 5;
    double stability_threshold = kDefaultStabilityThreshold;
    VaeTrainConfig vae;
    std::uint64_t master_seed = 0;
    std::filesystem::path out_dir = "latune_run";
    // Original-space thetas appended to the phase-1 initial design.
    std::optional<std::filesystem::path> warm_start_file;
    // Hand-tuned theta reported in the summary table.
    std::optional<std::filesystem::path> manual_theta_file;
    // Environment for phase 3 when it differs from env_id (decoder reuse).
    std::optional<std::string> phase3_env_id;
    // Region count of the latent search; m_regions when unset.
    std::optional<std::size_t> phase3_regions;
    // Optimizer settings per phase; `regions` is overridden by the counts above.
    TurboConfig phase1_turbo;
    TurboConfig phase3_turbo;

    // Checks budgets against the initial designs and d_low against the
    // environment dimension.
    void validate() const;

    [[nodiscard]] nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);

    [[nodiscard]] TurboConfig turbo_for(Phase phase) const;
    [[nodiscard]] std::string phase3_env() const { return phase3_env_id.value_or(env_id); }
};

// FNV-1a over the compact JSON dump of the config, as 16 hex digits.
std::string config_hash(const RunConfig& config);

// Seed handed to the environment for the `iteration`-th evaluation.
std::uint64_t evaluation_seed(std::uint64_t master_seed, Phase phase, std::int64_t iteration);

// Reads thetas from JSON: a single array of numbers, an array of arrays, or
// an object with "theta" / "thetas".
std::vector<std::vector<double>> load_theta_file(const std::filesystem::path& path);

struct PhaseResult {
    ReplayBuffer buffer;
    CostSample best;
    std::vector<TraceRow> trace;
};

struct PhaseTwoResult {
    VaeModel model;
    VaeTrainReport report;
    std::size_t stable_count = 0;
};

struct ReconPair {
    double original_cost = 0.0;
    double transformed_cost = 0.0;
};

struct ReconReport {
    std::size_t stable_in = 0;
    std::size_t stable_after = 0;
    std::vector<ReconPair> pairs;

    [[nodiscard]] double fraction() const {
        return stable_in == 0 ? 0.0 : static_cast<double>(stable_after) / static_cast<double>(stable_in);
    }
};

void write_recon_csv(std::ostream& out, const ReconReport& report);

struct RunArtifacts {
    std::filesystem::path phase1_buffer;
    std::filesystem::path phase1_trace;
    std::filesystem::path vae_checkpoint;
    std::filesystem::path phase3_buffer;
    std::filesystem::path phase3_trace;
    std::filesystem::path manifest;
    CostSample phase1_best;
    CostSample phase3_best;
    std::optional<double> manual_cost;
    std::size_t phase1_evaluations = 0;
    std::size_t phase3_evaluations = 0;
    VaeTrainReport vae_report;
};

// Artifact file names inside out_dir.
namespace artifact {
inline constexpr const char* kPhase1Buffer = "phase1_buffer.jsonl";
inline constexpr const char* kPhase1Trace = "phase1_trace.csv";
inline constexpr const char* kVae = "vae.json";
inline constexpr const char* kPhase3Buffer = "phase3_buffer.jsonl";
inline constexpr const char* kPhase3Trace = "phase3_trace.csv";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kRecon = "recon_scatter.csv";
}  // namespace artifact

// TuRBO over the full unit box of config.env_id. Persists the buffer and
// trace in out_dir when `persist` is set.
PhaseResult phase1(const RunConfig& config, bool persist = true);

// Trains the VAE on the normalized stable thetas of `buffer`.
PhaseTwoResult phase2(ReplayBuffer& buffer, const RunConfig& config, bool persist = true);

// TuRBO over the latent unit box; every z is decoded, denormalized with the
// bounds of `target_env_id` and evaluated there.
PhaseResult phase3(const VaeModel& model, const RunConfig& config, const std::string& target_env_id,
                   bool persist = true);
PhaseResult phase3(const std::filesystem::path& checkpoint, const RunConfig& config,
                   const std::string& target_env_id, bool persist = true);

// Re-evaluates every stable theta of `heldout` after encode/decode, with the
// seed recorded for the sample.
ReconReport recon_check(const VaeModel& model, const std::string& env_id, const ReplayBuffer& heldout,
                        double threshold = kDefaultStabilityThreshold);

// Cost of a hand-tuned theta on config.env_id (evaluation seed of iteration 0).
double evaluate_theta(const std::string& env_id, const std::vector<double>& theta, std::uint64_t seed);

// phase1 -> phase2 -> phase3, then writes the manifest and prints the
// summary table to `summary` when given.
RunArtifacts run_all(const RunConfig& config, std::ostream* summary = nullptr);

void print_summary(std::ostream& out, const RunArtifacts& artifacts);

}  // namespace latune
