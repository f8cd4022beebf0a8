// Command-line front end for parent training, transplanting, child runs,
// grid orchestration and reporting.
#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "rtl/error.hpp"
#include "rtl/harness.hpp"
#include "rtl/surgery.hpp"

namespace {

using namespace rtl;

void add_eval_options(CLI::App* cmd, harness::TrainConfig& cfg) {
    cmd->add_option("--eval-interval", cfg.eval_interval, "Environment steps between evaluations")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--eval-episodes", cfg.eval_episodes, "Greedy episodes per evaluation")->check(CLI::PositiveNumber);
}

void print_curve(const harness::LearningCurve& curve) {
    for (const auto& row : curve)
        std::printf("  step %7zu  return %8.3f +- %.3f  (%.1fs)\n", row.env_steps, row.eval_return_mean,
                    row.eval_return_std, row.wall_clock_seconds);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-transplant transfer experiments for Rainbow-style agents"};
    app.require_subcommand(1);

    harness::TrainConfig cfg;

    std::string env_name, out, parent, mode_text = "freeze", config_path, out_dir, in_dir;
    std::size_t steps = 50'000, k = 4, workers = 1, run = 0;
    std::uint64_t seed = 0;

    auto* tp = app.add_subcommand("train-parent", "Train a network from scratch and checkpoint it");
    tp->add_option("--env", env_name, "Environment name")->required();
    tp->add_option("--steps", steps, "Environment steps")->required();
    tp->add_option("--seed", seed, "Seed")->required();
    tp->add_option("--out", out, "Checkpoint path (.csv and .json written alongside)")->required();
    add_eval_options(tp, cfg);

    auto* tr = app.add_subcommand("transplant", "Build a child checkpoint from the first k layers of a parent");
    tr->add_option("--parent", parent, "Parent checkpoint")->required()->check(CLI::ExistingFile);
    tr->add_option("--k", k, "Transplanted depth positions (0..5)")->required();
    tr->add_option("--mode", mode_text, "freeze or finetune")->required();
    tr->add_option("--seed", seed, "Seed for the re-initialized layers")->required();
    tr->add_option("--out", out, "Child checkpoint path")->required();

    auto* rc = app.add_subcommand("run-child", "Transplant, train on a target environment, log the curve");
    rc->add_option("--parent", parent, "Parent checkpoint")->required()->check(CLI::ExistingFile);
    rc->add_option("--env", env_name, "Child environment")->required();
    rc->add_option("--k", k, "Transplanted depth positions (0..5)")->required();
    rc->add_option("--mode", mode_text, "freeze or finetune")->required();
    rc->add_option("--steps", steps, "Environment steps")->required();
    rc->add_option("--seed", seed, "Seed")->required();
    rc->add_option("--out-dir", out_dir, "Output directory")->required();
    rc->add_option("--run", run, "Run index used in the trial id");
    add_eval_options(rc, cfg);

    auto* rg = app.add_subcommand("run-grid", "Run (or resume) a full parent/child grid");
    rg->add_option("--config", config_path, "Grid config file")->required()->check(CLI::ExistingFile);
    rg->add_option("--out-dir", out_dir, "Output directory")->required();
    rg->add_option("--workers", workers, "Parallel trials")->check(CLI::PositiveNumber);

    auto* rp = app.add_subcommand("report", "Aggregate learning curves into summary and plot CSVs");
    rp->add_option("--in-dir", in_dir, "Directory holding trial CSVs")->required()->check(CLI::ExistingDirectory);
    rp->add_option("--out", out, "Summary CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (tp->parsed()) {
            const auto result = harness::train_parent(env_name, steps, seed, out, cfg);
            std::printf("parent %s trained for %zu steps -> %s\n", env_name.c_str(), steps, out.c_str());
            print_curve(result.record.curve);
        } else if (tr->parsed()) {
            const auto mode = surgery::parse_mode(mode_text);
            const auto audit = harness::transplant_checkpoint(parent, k, mode, seed, out, cfg.agent);
            for (const auto& l : audit.layers)
                std::printf("  %-18s depth %zu  %s\n", l.name.c_str(), l.depth,
                            l.equal ? "copied" : "re-initialized");
            std::printf("transplant k=%zu mode=%s %s -> %s\n", k, std::string(surgery::to_string(mode)).c_str(),
                        audit.pass ? "verified" : "FAILED VERIFICATION", out.c_str());
            if (!audit.pass) return 1;
        } else if (rc->parsed()) {
            const auto rec = harness::run_child(parent, {env_name, k, surgery::parse_mode(mode_text), seed, steps, run},
                                                out_dir, cfg);
            std::printf("%s done\n", rec.trial_id.c_str());
            print_curve(rec.curve);
            if (rec.freeze_audit && !*rec.freeze_audit) {
                std::fprintf(stderr, "freeze audit failed: frozen layers changed during training\n");
                return 1;
            }
        } else if (rg->parsed()) {
            const auto grid = harness::load_grid_config(config_path);
            const auto summary = harness::run_grid(grid, out_dir, workers);
            std::printf("planned %zu, executed %zu, skipped %zu, failed %zu\n", summary.planned, summary.executed,
                        summary.skipped, summary.failed);
            for (const auto& f : summary.failures) std::fprintf(stderr, "  failed %s\n", f.c_str());
            if (summary.failed > 0) return 1;
        } else if (rp->parsed()) {
            const auto rep = harness::report(in_dir, out);
            std::printf("%zu series -> %s\n", rep.series.size(), out.c_str());
            for (const auto& p : rep.plot_files) std::printf("  plot data %s\n", p.string().c_str());
        }
    } catch (const rtl::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 3;
    }
    return 0;
}
