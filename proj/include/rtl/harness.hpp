#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rtl/agent.hpp"
#include "rtl/envs.hpp"
#include "rtl/replay.hpp"
#include "rtl/surgery.hpp"

namespace rtl::harness {

namespace fs = std::filesystem;

inline constexpr const char* kCurveHeader =
    "trial_id,parent_env,child_env,k,mode,run,env_steps,eval_return_mean,eval_return_std,wall_clock_seconds";
inline constexpr const char* kPlotHeader = "series,env_steps,mean,std";
inline constexpr const char* kSummaryHeader =
    "child_env,series,parent_env,k,mode,runs,final_env_steps,final_mean,final_std,steps_to_threshold";

struct TrainConfig {
    agent::AgentConfig agent{};
    replay::BufferConfig buffer{};
    std::size_t eval_interval = 5000;
    std::size_t eval_episodes = 10;
    /// Evaluation episodes use seeds derived from this value only, so every
    /// trial on a given environment is scored on the same episodes.
    std::uint64_t eval_seed = 20'190'501;
};

struct CurveRow {
    std::size_t env_steps = 0;
    double eval_return_mean = 0.0;
    double eval_return_std = 0.0;
    double wall_clock_seconds = 0.0;
};

using LearningCurve = std::vector<CurveRow>;

struct EvalResult {
    double mean = 0.0;
    double std = 0.0;  // population
    std::vector<double> returns;
};

using EnvFactory = std::function<std::unique_ptr<env::Environment>()>;

EnvFactory env_factory(const std::string& name);

/// Noise-free greedy episodes; undiscounted returns.
EvalResult evaluate(const agent::Agent& agent, const EnvFactory& make_env, std::size_t episodes,
                    std::uint64_t eval_seed);

struct TrainOutcome {
    LearningCurve curve;
    std::size_t train_steps = 0;
    std::size_t episodes = 0;
};

/// Runs `steps` environment steps of noisy-net exploration with prioritized
/// n-step replay. Evaluates at step 0, every eval_interval steps and after the
/// last step; before the final evaluation the online network is rounded to
/// 32-bit precision so that it matches its checkpoint exactly.
TrainOutcome train_agent(agent::Agent& agent, const EnvFactory& make_env, std::size_t steps, std::uint64_t seed,
                         const TrainConfig& config, const nn::FreezeMask* mask = nullptr);

struct TrialRecord {
    std::string trial_id;
    std::string role;  // "parent" | "child"
    std::string parent_env;
    std::string child_env;
    std::optional<std::size_t> k;
    std::string mode;  // "scratch" | "freeze" | "finetune"
    std::size_t run = 0;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    LearningCurve curve;
    std::string status = "ok";
    std::optional<surgery::TransplantReport> transplant;
    std::optional<bool> freeze_audit;
    std::string checkpoint;  // file name relative to the record
};

std::string parent_trial_id(const std::string& env, std::size_t run = 0);
std::string child_trial_id(std::size_t k, surgery::TransplantMode mode, const std::string& parent_env,
                           const std::string& child_env, std::size_t run);
/// Matches either trial-id grammar.
bool valid_trial_id(const std::string& id);

/// Deterministic per-trial seed.
std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& trial_id);

void write_curve_csv(const TrialRecord& record, const fs::path& path);
void write_record_json(const TrialRecord& record, const fs::path& path);
TrialRecord read_record_json(const fs::path& path);

struct ParentResult {
    surgery::Checkpoint checkpoint;
    TrialRecord record;
};

/// Trains a scratch agent and writes <out>, <out>.csv-sibling curve and
/// record (same stem, .csv / .json).
ParentResult train_parent(const std::string& env_name, std::size_t steps, std::uint64_t seed,
                          const fs::path& out_path, const TrainConfig& config = {});

/// Loads a parent checkpoint, transplants its first k depth positions into a
/// fresh network seeded by `seed`, audits the result and saves the child.
surgery::TransplantReport transplant_checkpoint(const fs::path& parent_checkpoint, std::size_t k,
                                                surgery::TransplantMode mode, std::uint64_t seed,
                                                const fs::path& out_path, const agent::AgentConfig& agent = {});

struct ChildOptions {
    std::string child_env;
    std::size_t k = 4;
    surgery::TransplantMode mode = surgery::TransplantMode::freeze;
    std::uint64_t seed = 0;
    std::size_t steps = 50'000;
    std::size_t run = 0;
};

/// Transplants from the parent checkpoint, trains on child_env and writes
/// <trial_id>.ckpt/.csv/.json into out_dir (the .json last).
TrialRecord run_child(const fs::path& parent_checkpoint, const ChildOptions& options, const fs::path& out_dir,
                      const TrainConfig& config = {});

struct ExperimentGrid {
    std::vector<std::string> envs{"corridor", "chase", "river"};
    std::vector<std::size_t> k_values{2, 4};
    std::vector<surgery::TransplantMode> modes{surgery::TransplantMode::freeze, surgery::TransplantMode::finetune};
    std::size_t runs_per_cell = 3;
    std::size_t parent_steps = 50'000;
    std::size_t child_steps = 50'000;
    std::uint64_t base_seed = 0;
    std::size_t eval_interval = 5000;
    std::size_t eval_episodes = 10;

    void validate() const;
};

/// Plain-text `key = value` file; '#' starts a comment.
ExperimentGrid parse_grid_config(const std::string& text);
ExperimentGrid load_grid_config(const fs::path& path);

struct PlannedTrial {
    std::string trial_id;
    bool parent = false;
    std::string parent_env;
    std::string child_env;
    std::size_t k = 0;
    surgery::TransplantMode mode = surgery::TransplantMode::finetune;
    std::size_t run = 0;
    std::uint64_t seed = 0;
};

/// Parents first, then every (parent_env, child_env, k, mode, run) cell.
std::vector<PlannedTrial> plan_grid(const ExperimentGrid& grid);

struct GridSummary {
    std::size_t planned = 0;
    std::size_t executed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
    std::vector<std::string> failures;
};

/// Resumable: trials whose record reports status "ok" are skipped.
GridSummary run_grid(const ExperimentGrid& grid, const fs::path& out_dir, std::size_t workers = 1,
                     std::optional<TrainConfig> base_config = std::nullopt);

struct SeriesSummary {
    std::string child_env;
    std::string series;  // "baseline" or "child{k}-{frozen|finetuned}-{parent_env}"
    std::string parent_env;
    std::optional<std::size_t> k;
    std::string mode;
    std::size_t runs = 0;
    std::size_t final_env_steps = 0;
    double final_mean = 0.0;
    double final_std = 0.0;
    std::optional<std::size_t> steps_to_threshold;
    std::vector<CurveRow> mean_curve;  // eval_return_mean = across-run mean, eval_return_std = across-run std
};

struct Report {
    std::vector<SeriesSummary> series;
    std::vector<fs::path> plot_files;
};

/// Reads every learning-curve CSV under in_dir; writes the summary to out_path
/// and one plot-data CSV per child environment next to it.
Report report(const fs::path& in_dir, const fs::path& out_path);

/// Population mean and standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& xs);

}  // namespace rtl::harness
