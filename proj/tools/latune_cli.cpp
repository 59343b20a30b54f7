// latune command-line front end.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "latune/environments.hpp"
#include "latune/errors.hpp"
#include "latune/pipeline.hpp"
#include "latune/test_functions.hpp"

namespace fs = std::filesystem;
using namespace latune;

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> budget;
    std::optional<std::size_t> regions;
    std::optional<std::size_t> latent_dim;
    std::optional<std::string> env;
};

void add_common(CLI::App* app, CommonOptions& o) {
    app->add_option("--config", o.config, "Run config (JSON)")->check(CLI::ExistingFile);
    app->add_option("--seed", o.seed, "Master seed");
    app->add_option("--out-dir", o.out_dir, "Artifact directory");
    app->add_option("--budget", o.budget, "Evaluation budget of the phase being run");
    app->add_option("--regions", o.regions, "Number of trust regions");
    app->add_option("--latent-dim", o.latent_dim, "Latent dimension d_low");
    app->add_option("--env", o.env, "Environment id");
}

RunConfig resolve(const CommonOptions& o, Phase budget_phase) {
    RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
    if (o.seed) {
        c.master_seed = *o.seed;
    }
    if (o.out_dir) {
        c.out_dir = *o.out_dir;
    }
    if (o.budget) {
        (budget_phase == Phase::Phase1 ? c.phase1_budget : c.phase3_budget) = *o.budget;
    }
    if (o.regions) {
        // Applies to every phase.
        c.m_regions = *o.regions;
        c.phase3_regions.reset();
    }
    if (o.latent_dim) {
        c.d_low = *o.latent_dim;
    }
    if (o.env) {
        c.env_id = *o.env;
    }
    return c;
}

void print_best(const char* label, const CostSample& best, std::size_t evaluations) {
    std::cout << label << ": best cost " << best.cost << " at iteration " << best.iteration << " ("
              << evaluations << " evaluations)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-space controller tuning: trust-region BO, VAE, latent search"};
    app.require_subcommand(1);

    CommonOptions p1_opts;
    auto* p1 = app.add_subcommand("phase1", "Trust-region search over the full parameter box");
    add_common(p1, p1_opts);

    CommonOptions tv_opts;
    std::string tv_buffer;
    auto* tv = app.add_subcommand("train-vae", "Train the VAE on the stable phase-1 samples");
    add_common(tv, tv_opts);
    tv->add_option("--buffer", tv_buffer, "Phase-1 buffer (default <out-dir>/phase1_buffer.jsonl)");

    CommonOptions p3_opts;
    std::string p3_checkpoint;
    auto* p3 = app.add_subcommand("phase3", "Trust-region search in the latent box through the decoder");
    add_common(p3, p3_opts);
    p3->add_option("--checkpoint", p3_checkpoint, "VAE checkpoint (default <out-dir>/vae.json)");

    CommonOptions ra_opts;
    auto* ra = app.add_subcommand("run-all", "phase1, train-vae and phase3 with a manifest");
    add_common(ra, ra_opts);

    CommonOptions ev_opts;
    std::string ev_file;
    std::string ev_rollout;
    auto* ev = app.add_subcommand("eval", "Evaluate a theta file on an environment");
    add_common(ev, ev_opts);
    ev->add_option("theta-file", ev_file, "JSON theta file")->required()->check(CLI::ExistingFile);
    ev->add_option("--rollout-csv", ev_rollout, "Write the per-step rollout trace");

    CommonOptions rc_opts;
    std::string rc_checkpoint;
    std::string rc_heldout;
    std::string rc_csv;
    auto* rc = app.add_subcommand("recon-check", "Stability of held-out samples after encode/decode");
    add_common(rc, rc_opts);
    rc->add_option("--checkpoint", rc_checkpoint, "VAE checkpoint (default <out-dir>/vae.json)");
    rc->add_option("--heldout", rc_heldout, "Held-out buffer (JSONL)")->required()->check(CLI::ExistingFile);
    rc->add_option("--csv", rc_csv, "Scatter CSV (default <out-dir>/recon_scatter.csv)");

    std::string bench_fn = "ackley";
    std::size_t bench_dim = 10;
    std::size_t bench_budget = 300;
    std::size_t bench_seeds = 10;
    std::uint64_t bench_seed = 0;
    std::size_t bench_pool = 0;
    auto* bench = app.add_subcommand("bench", "TuRBO against uniform random search on a test function");
    bench->add_option("--function", bench_fn, "ackley, rastrigin or sphere")->capture_default_str();
    bench->add_option("--dim", bench_dim)->capture_default_str();
    bench->add_option("--budget", bench_budget)->capture_default_str();
    bench->add_option("--seeds", bench_seeds, "Number of seeds")->capture_default_str();
    bench->add_option("--seed", bench_seed, "First seed")->capture_default_str();
    bench->add_option("--pool-size", bench_pool, "Thompson pool size (0: default)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*p1) {
            const RunConfig c = resolve(p1_opts, Phase::Phase1);
            const PhaseResult r = phase1(c);
            print_best("phase 1", r.best, r.buffer.size());
        } else if (*tv) {
            const RunConfig c = resolve(tv_opts, Phase::Phase1);
            const fs::path path = tv_buffer.empty() ? c.out_dir / artifact::kPhase1Buffer : fs::path(tv_buffer);
            ReplayBuffer buffer = ReplayBuffer::load(path);
            const PhaseTwoResult r = phase2(buffer, c);
            std::cout << "trained on " << r.stable_count << " stable samples; best epoch "
                      << r.report.best_epoch << ", validation loss " << r.report.best_validation_loss
                      << ", validation mse " << r.report.validation_mse << '\n';
        } else if (*p3) {
            const RunConfig c = resolve(p3_opts, Phase::Phase3);
            const fs::path ckpt = p3_checkpoint.empty() ? c.out_dir / artifact::kVae : fs::path(p3_checkpoint);
            const PhaseResult r = phase3(ckpt, c, c.env_id);
            print_best("phase 3", r.best, r.buffer.size());
        } else if (*ra) {
            const RunConfig c = resolve(ra_opts, Phase::Phase1);
            const RunArtifacts a = run_all(c, &std::cout);
            std::cout << "manifest: " << a.manifest.string() << '\n';
        } else if (*ev) {
            const RunConfig c = resolve(ev_opts, Phase::Phase1);
            const auto env = make_environment(c.env_id);
            const auto thetas = load_theta_file(ev_file);
            for (std::size_t i = 0; i < thetas.size(); ++i) {
                const std::uint64_t seed = evaluation_seed(c.master_seed, Phase::Phase1, 0);
                const RolloutResult r =
                    env->evaluate(ParamVector::original(thetas[i]), seed, !ev_rollout.empty());
                std::cout << "theta " << i << ": cost " << r.cost << (r.fell ? " (fell at step " : "");
                if (r.fell) {
                    std::cout << *r.fall_step << ')';
                }
                std::cout << '\n';
                if (!ev_rollout.empty() && i == 0) {
                    std::ofstream out(ev_rollout);
                    write_rollout_csv(out, r);
                }
            }
        } else if (*rc) {
            const RunConfig c = resolve(rc_opts, Phase::Phase1);
            const fs::path ckpt = rc_checkpoint.empty() ? c.out_dir / artifact::kVae : fs::path(rc_checkpoint);
            const ReconReport r = recon_check(load_checkpoint(ckpt), c.env_id, ReplayBuffer::load(rc_heldout),
                                              c.stability_threshold);
            const fs::path csv = rc_csv.empty() ? c.out_dir / artifact::kRecon : fs::path(rc_csv);
            if (csv.has_parent_path()) {
                fs::create_directories(csv.parent_path());
            }
            std::ofstream out(csv);
            write_recon_csv(out, r);
            std::cout << r.stable_after << " of " << r.stable_in << " stable samples remain stable ("
                      << 100.0 * r.fraction() << "%); scatter in " << csv.string() << '\n';
        } else if (*bench) {
            TurboConfig tc;
            tc.pool_size = bench_pool;
            const BenchSummary s =
                run_bench(make_test_function(bench_fn, bench_dim), bench_budget, bench_seeds, tc, bench_seed);
            std::cout << "seed,turbo_best,random_best\n";
            for (const auto& row : s.rows) {
                std::cout << row.seed << ',' << row.turbo_best << ',' << row.random_best << '\n';
            }
            std::cout << "median turbo " << s.turbo_median << ", random " << s.random_median << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
