#include "rtl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rtl/error.hpp"
#include "rtl/hash.hpp"

namespace rtl::harness {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

void write_text_atomic(const std::string& text, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::random_device rd;
    auto tmp = path;
    tmp += ".tmp" + std::to_string(rd());
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out << text;
        if (!out) throw Error("failed writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

json config_json(const TrainConfig& c) {
    const auto& a = c.agent;
    return {
        {"gamma", a.gamma},
        {"n_step", a.n_step},
        {"target_sync_period", a.target_sync_period},
        {"batch_size", a.batch_size},
        {"train_every", a.train_every},
        {"warmup_steps", a.warmup_steps},
        {"history_len", agent::AgentConfig::history_len},
        {"n_atoms", a.n_atoms},
        {"v_min", a.v_min},
        {"v_max", a.v_max},
        {"hidden", a.hidden},
        {"sigma0", a.sigma0},
        {"lr", a.adam.lr},
        {"adam_epsilon", a.adam.epsilon},
        {"replay_capacity", c.buffer.capacity},
        {"alpha", c.buffer.alpha},
        {"beta0", c.buffer.beta0},
        {"priority_epsilon", c.buffer.priority_epsilon},
        {"eval_interval", c.eval_interval},
        {"eval_episodes", c.eval_episodes},
        {"eval_seed", c.eval_seed},
    };
}

std::uint64_t eval_episode_seed(std::uint64_t eval_seed, std::size_t episode) {
    return mix64(eval_seed + 0x1000 * static_cast<std::uint64_t>(episode));
}

std::string mode_word(surgery::TransplantMode m) {
    return m == surgery::TransplantMode::freeze ? "frozen" : "finetuned";
}

}  // namespace

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

EnvFactory env_factory(const std::string& name) {
    env::make_env(name);  // validates the name eagerly
    return [name] { return env::make_env(name); };
}

EvalResult evaluate(const agent::Agent& agent, const EnvFactory& make_env, std::size_t episodes,
                    std::uint64_t eval_seed) {
    EvalResult result;
    auto e = make_env();
    env::FrameStack stack;
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        stack.reset(e->reset(eval_episode_seed(eval_seed, ep)));
        double total = 0.0;
        while (!e->done()) {
            const std::size_t a = agent::argmax(agent.q_values(stack.observation()));
            const auto r = e->step(a);
            total += r.reward;
            stack.push(r.frame);
        }
        result.returns.push_back(total);
    }
    std::tie(result.mean, result.std) = mean_std(result.returns);
    return result;
}

TrainOutcome train_agent(agent::Agent& agent, const EnvFactory& make_env, std::size_t steps, std::uint64_t seed,
                         const TrainConfig& config, const nn::FreezeMask* mask) {
    if (config.eval_interval == 0) throw ConfigError("eval_interval must be >= 1");
    const auto& ac = agent.config();
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    TrainOutcome outcome;
    auto eval_row = [&](std::size_t t) {
        const auto ev = evaluate(agent, make_env, config.eval_episodes, config.eval_seed);
        outcome.curve.push_back({t, ev.mean, ev.std, elapsed()});
    };

    auto e = make_env();
    std::mt19937_64 episode_rng(mix64(seed ^ 0xe915'0de5ULL));
    replay::PrioritizedReplay buffer(config.buffer);
    replay::NStepFolder folder(ac.n_step, ac.gamma);
    env::FrameStack stack;
    stack.reset(e->reset(episode_rng()));
    for (std::size_t t = 0; t < steps; ++t) {
        if (t % config.eval_interval == 0) eval_row(t);
        const env::Observation obs = stack.observation();
        const std::size_t action = agent.act(obs, agent::Mode::train);
        const auto r = e->step(action);
        const env::Observation& next = stack.push(r.frame);
        for (auto& tr : folder.push({obs, action, r.reward, next, r.terminal})) buffer.push(std::move(tr));
        if (r.terminal) {
            ++outcome.episodes;
            stack.reset(e->reset(episode_rng()));
        }
        const std::size_t done = t + 1;
        if (done >= ac.warmup_steps && done % ac.train_every == 0) {
            if (agent.train_step(buffer, replay::beta_at(config.buffer.beta0, done, steps), mask))
                ++outcome.train_steps;
        }
    }
    agent.mutable_online().round_to_float();
    eval_row(steps);
    return outcome;
}

std::string parent_trial_id(const std::string& env, std::size_t run) {
    return "parent-" + env + "--run" + std::to_string(run);
}

std::string child_trial_id(std::size_t k, surgery::TransplantMode mode, const std::string& parent_env,
                           const std::string& child_env, std::size_t run) {
    return "child" + std::to_string(k) + "-" + mode_word(mode) + "-" + parent_env + "--on-" + child_env + "--run" +
           std::to_string(run);
}

bool valid_trial_id(const std::string& id) {
    static const std::regex child(R"(child[0-9]+-(frozen|finetuned)-[a-z0-9_]+--on-[a-z0-9_]+--run[0-9]+)");
    static const std::regex parent(R"(parent-[a-z0-9_]+--run[0-9]+)");
    return std::regex_match(id, child) || std::regex_match(id, parent);
}

std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& trial_id) {
    return mix64(base_seed ^ fnv1a64(trial_id));
}

void write_curve_csv(const TrialRecord& record, const fs::path& path) {
    std::string text = std::string(kCurveHeader) + "\n";
    const std::string k = record.k ? std::to_string(*record.k) : "";
    for (const auto& row : record.curve) {
        text += record.trial_id + "," + record.parent_env + "," + record.child_env + "," + k + "," + record.mode + "," +
                std::to_string(record.run) + "," + std::to_string(row.env_steps) + "," +
                fmt_double(row.eval_return_mean) + "," + fmt_double(row.eval_return_std) + "," +
                fmt_double(row.wall_clock_seconds) + "\n";
    }
    write_text_atomic(text, path);
}

void write_record_json(const TrialRecord& r, const fs::path& path) {
    json j;
    j["trial_id"] = r.trial_id;
    j["role"] = r.role;
    j["parent_env"] = r.parent_env;
    j["child_env"] = r.child_env;
    j["k"] = r.k ? json(*r.k) : json(nullptr);
    j["mode"] = r.mode;
    j["run"] = r.run;
    j["seed"] = r.seed;
    j["steps"] = r.steps;
    j["status"] = r.status;
    j["checkpoint"] = r.checkpoint;
    json curve = json::array();
    for (const auto& row : r.curve)
        curve.push_back({{"env_steps", row.env_steps},
                         {"eval_return_mean", row.eval_return_mean},
                         {"eval_return_std", row.eval_return_std},
                         {"wall_clock_seconds", row.wall_clock_seconds}});
    j["curve"] = curve;
    if (r.transplant) {
        json layers = json::array();
        for (const auto& l : r.transplant->layers)
            layers.push_back({{"name", l.name}, {"depth", l.depth}, {"equal_to_parent", l.equal}});
        j["transplant_report"] = {{"k", r.transplant->k}, {"pass", r.transplant->pass}, {"layers", layers}};
    }
    if (r.freeze_audit) j["freeze_audit"] = {{"frozen_layers_bitwise_equal", *r.freeze_audit}};
    write_text_atomic(j.dump(2) + "\n", path);
}

TrialRecord read_record_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open trial record '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("trial record '" + path.string() + "' is not valid JSON: " + e.what());
    }
    TrialRecord r;
    r.trial_id = j.at("trial_id").get<std::string>();
    r.role = j.at("role").get<std::string>();
    r.parent_env = j.at("parent_env").get<std::string>();
    r.child_env = j.at("child_env").get<std::string>();
    if (!j.at("k").is_null()) r.k = j.at("k").get<std::size_t>();
    r.mode = j.at("mode").get<std::string>();
    r.run = j.at("run").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.steps = j.at("steps").get<std::size_t>();
    r.status = j.at("status").get<std::string>();
    r.checkpoint = j.value("checkpoint", "");
    for (const auto& row : j.at("curve"))
        r.curve.push_back({row.at("env_steps").get<std::size_t>(), row.at("eval_return_mean").get<double>(),
                           row.at("eval_return_std").get<double>(), row.at("wall_clock_seconds").get<double>()});
    if (j.contains("transplant_report")) {
        surgery::TransplantReport rep;
        rep.k = j["transplant_report"].at("k").get<std::size_t>();
        rep.pass = j["transplant_report"].at("pass").get<bool>();
        for (const auto& l : j["transplant_report"].at("layers"))
            rep.layers.push_back({l.at("name").get<std::string>(), l.at("depth").get<std::size_t>(),
                                  l.at("equal_to_parent").get<bool>()});
        r.transplant = rep;
    }
    if (j.contains("freeze_audit")) r.freeze_audit = j["freeze_audit"].at("frozen_layers_bitwise_equal").get<bool>();
    return r;
}

ParentResult train_parent(const std::string& env_name, std::size_t steps, std::uint64_t seed,
                          const fs::path& out_path, const TrainConfig& config) {
    const auto make_env = env_factory(env_name);
    agent::Agent agent(config.agent, seed);
    const auto outcome = train_agent(agent, make_env, steps, seed, config);

    surgery::CheckpointInfo info{env_name, steps, seed, {{"role", "parent"}}};
    auto ckpt = surgery::make_checkpoint(agent.online(), info);
    surgery::save(ckpt, out_path);

    TrialRecord rec;
    rec.trial_id = parent_trial_id(env_name);
    rec.role = "parent";
    rec.parent_env = env_name;
    rec.child_env = env_name;
    rec.mode = "scratch";
    rec.seed = seed;
    rec.steps = steps;
    rec.curve = outcome.curve;
    rec.checkpoint = out_path.filename().string();
    auto stem = out_path;
    write_curve_csv(rec, stem.replace_extension(".csv"));
    write_record_json(rec, stem.replace_extension(".json"));
    return {std::move(ckpt), std::move(rec)};
}

surgery::TransplantReport transplant_checkpoint(const fs::path& parent_checkpoint, std::size_t k,
                                                surgery::TransplantMode mode, std::uint64_t seed,
                                                const fs::path& out_path, const agent::AgentConfig& agent) {
    const auto arch = agent::agent_network_spec(agent);
    const auto ckpt = surgery::load(parent_checkpoint, nn::Network(arch).architecture_hash());
    const auto parent = surgery::to_network(ckpt, arch);
    const auto child = surgery::transplant(parent, {k, mode, seed});
    auto audit = surgery::verify_transplant(parent, child.child, k);
    surgery::CheckpointInfo info{ckpt.env(),
                                 0,
                                 seed,
                                 {{"role", "transplant"},
                                  {"parent_env", ckpt.env()},
                                  {"transplant_k", std::to_string(k)},
                                  {"transplant_mode", std::string(surgery::to_string(mode))}}};
    surgery::save(child.child, info, out_path);
    return audit;
}

TrialRecord run_child(const fs::path& parent_checkpoint, const ChildOptions& opt, const fs::path& out_dir,
                      const TrainConfig& config) {
    const auto arch = agent::agent_network_spec(config.agent);
    const auto expected_hash = nn::Network(arch).architecture_hash();
    const auto parent_ckpt = surgery::load(parent_checkpoint, expected_hash);
    const std::string parent_env = parent_ckpt.env();
    if (parent_env.empty()) throw FormatError("parent checkpoint does not record its environment");
    const auto make_env = env_factory(opt.child_env);
    const nn::Network parent = surgery::to_network(parent_ckpt, arch);

    auto transplanted = surgery::transplant(parent, {opt.k, opt.mode, mix64(opt.seed ^ 0x7ea1'1a17ULL)});

    TrialRecord rec;
    rec.trial_id = child_trial_id(opt.k, opt.mode, parent_env, opt.child_env, opt.run);
    rec.role = "child";
    rec.parent_env = parent_env;
    rec.child_env = opt.child_env;
    rec.k = opt.k;
    rec.mode = std::string(surgery::to_string(opt.mode));
    rec.run = opt.run;
    rec.seed = opt.seed;
    rec.steps = opt.steps;
    rec.transplant = surgery::verify_transplant(parent, transplanted.child, opt.k);

    agent::Agent agent(config.agent, std::move(transplanted.child), opt.seed);
    const auto outcome = train_agent(agent, make_env, opt.steps, opt.seed, config, &transplanted.mask);
    rec.curve = outcome.curve;
    if (opt.mode == surgery::TransplantMode::freeze)
        rec.freeze_audit = surgery::frozen_layers_equal(parent, agent.online(), transplanted.mask);

    fs::create_directories(out_dir);
    surgery::CheckpointInfo info{opt.child_env,
                                 opt.steps,
                                 opt.seed,
                                 {{"role", "child"},
                                  {"parent_env", parent_env},
                                  {"transplant_k", std::to_string(opt.k)},
                                  {"transplant_mode", rec.mode}}};
    surgery::save(agent.online(), info, out_dir / (rec.trial_id + ".ckpt"));
    rec.checkpoint = rec.trial_id + ".ckpt";
    write_curve_csv(rec, out_dir / (rec.trial_id + ".csv"));
    write_record_json(rec, out_dir / (rec.trial_id + ".json"));
    return rec;
}

void ExperimentGrid::validate() const {
    if (envs.empty()) throw ConfigError("grid needs at least one environment");
    std::set<std::string> seen;
    for (const auto& e : envs) {
        env::make_env(e);
        if (!seen.insert(e).second) throw ConfigError("environment '" + e + "' listed twice");
    }
    if (k_values.empty() || modes.empty()) throw ConfigError("grid needs k_values and modes");
    const std::size_t l = nn::Network(agent::agent_network_spec({})).depth();
    for (auto k : k_values)
        if (k > l) throw ConfigError("k=" + std::to_string(k) + " exceeds network depth " + std::to_string(l));
    if (runs_per_cell == 0) throw ConfigError("runs must be >= 1");
    if (eval_interval == 0 || eval_episodes == 0) throw ConfigError("evaluation settings must be >= 1");
}

ExperimentGrid parse_grid_config(const std::string& text) {
    ExperimentGrid g;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto to_size = [&](const std::string& v, const std::string& key) -> std::size_t {
        try {
            std::size_t pos = 0;
            const auto n = std::stoull(v, &pos);
            if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
            return n;
        } catch (const std::exception&) {
            throw ConfigError("line " + std::to_string(lineno) + ": '" + key + "' expects a non-negative integer");
        }
    };
    auto list = [](const std::string& v) {
        std::vector<std::string> out;
        for (auto& item : split(v, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto sep = line.find('=');
        if (sep == std::string::npos) sep = line.find(':');
        if (sep == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, sep));
        const std::string value = trim(line.substr(sep + 1));
        if (value.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty value for '" + key + "'");
        if (key == "envs") {
            g.envs = list(value);
        } else if (key == "k_values") {
            g.k_values.clear();
            for (const auto& v : list(value)) g.k_values.push_back(to_size(v, key));
        } else if (key == "modes") {
            g.modes.clear();
            for (const auto& v : list(value)) g.modes.push_back(surgery::parse_mode(v));
        } else if (key == "runs") {
            g.runs_per_cell = to_size(value, key);
        } else if (key == "parent_steps") {
            g.parent_steps = to_size(value, key);
        } else if (key == "child_steps") {
            g.child_steps = to_size(value, key);
        } else if (key == "base_seed") {
            g.base_seed = to_size(value, key);
        } else if (key == "eval_interval") {
            g.eval_interval = to_size(value, key);
        } else if (key == "eval_episodes") {
            g.eval_episodes = to_size(value, key);
        } else {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    g.validate();
    return g;
}

ExperimentGrid load_grid_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open grid config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_grid_config(ss.str());
}

std::vector<PlannedTrial> plan_grid(const ExperimentGrid& grid) {
    grid.validate();
    std::vector<PlannedTrial> plan;
    for (const auto& e : grid.envs) {
        PlannedTrial t;
        t.trial_id = parent_trial_id(e);
        t.parent = true;
        t.parent_env = t.child_env = e;
        t.k = 0;
        t.seed = trial_seed(grid.base_seed, t.trial_id);
        plan.push_back(t);
    }
    for (const auto& pe : grid.envs)
        for (const auto& ce : grid.envs)
            for (auto k : grid.k_values)
                for (auto m : grid.modes)
                    for (std::size_t r = 0; r < grid.runs_per_cell; ++r) {
                        PlannedTrial t;
                        t.trial_id = child_trial_id(k, m, pe, ce, r);
                        t.parent_env = pe;
                        t.child_env = ce;
                        t.k = k;
                        t.mode = m;
                        t.run = r;
                        t.seed = trial_seed(grid.base_seed, t.trial_id);
                        plan.push_back(t);
                    }
    return plan;
}

namespace {

bool trial_complete(const fs::path& dir, const std::string& id) {
    const auto rec = dir / (id + ".json");
    if (!fs::exists(rec) || !fs::exists(dir / (id + ".csv"))) return false;
    try {
        return read_record_json(rec).status == "ok";
    } catch (const Error&) {
        return false;
    }
}

void record_failure(const PlannedTrial& t, const ExperimentGrid& grid, const fs::path& dir, const std::string& what) {
    TrialRecord rec;
    rec.trial_id = t.trial_id;
    rec.role = t.parent ? "parent" : "child";
    rec.parent_env = t.parent_env;
    rec.child_env = t.child_env;
    if (!t.parent) rec.k = t.k;
    rec.mode = t.parent ? "scratch" : std::string(surgery::to_string(t.mode));
    rec.run = t.run;
    rec.seed = t.seed;
    rec.steps = t.parent ? grid.parent_steps : grid.child_steps;
    rec.status = "failed: " + what;
    write_record_json(rec, dir / (t.trial_id + ".json"));
}

}  // namespace

GridSummary run_grid(const ExperimentGrid& grid, const fs::path& out_dir, std::size_t workers,
                     std::optional<TrainConfig> base_config) {
    const auto plan = plan_grid(grid);
    TrainConfig config = base_config.value_or(TrainConfig{});
    config.eval_interval = grid.eval_interval;
    config.eval_episodes = grid.eval_episodes;
    fs::create_directories(out_dir);
    {
        json manifest = {{"planned", plan.size()}, {"config", config_json(config)}};
        write_text_atomic(manifest.dump(2) + "\n", out_dir / "grid.json");
    }

    GridSummary summary;
    summary.planned = plan.size();
    std::mutex mu;

    auto run_phase = [&](const std::vector<const PlannedTrial*>& todo) {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < todo.size(); i = next++) {
                const auto& t = *todo[i];
                try {
                    if (t.parent) {
                        train_parent(t.parent_env, grid.parent_steps, t.seed, out_dir / (t.trial_id + ".ckpt"), config);
                    } else {
                        run_child(out_dir / (parent_trial_id(t.parent_env) + ".ckpt"),
                                  {t.child_env, t.k, t.mode, t.seed, grid.child_steps, t.run}, out_dir, config);
                    }
                    std::lock_guard lock(mu);
                    ++summary.executed;
                } catch (const std::exception& e) {
                    record_failure(t, grid, out_dir, e.what());
                    std::lock_guard lock(mu);
                    ++summary.failed;
                    summary.failures.push_back(t.trial_id + ": " + e.what());
                }
            }
        };
        const std::size_t n = std::max<std::size_t>(1, std::min(workers, todo.size()));
        std::vector<std::jthread> pool;
        for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
        worker();
    };

    std::vector<const PlannedTrial*> parents, children;
    for (const auto& t : plan) {
        if (trial_complete(out_dir, t.trial_id) && (!t.parent || fs::exists(out_dir / (t.trial_id + ".ckpt")))) {
            ++summary.skipped;
            continue;
        }
        (t.parent ? parents : children).push_back(&t);
    }
    run_phase(parents);
    run_phase(children);
    return summary;
}

namespace {

struct CurveFileRow {
    std::string trial_id, parent_env, child_env, k, mode;
    std::size_t run = 0;
    CurveRow row;
};

std::vector<CurveFileRow> read_curve_csv(const fs::path& path) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line) || trim(line) != kCurveHeader) return {};
    std::vector<CurveFileRow> rows;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 10) throw FormatError("malformed learning-curve row in '" + path.string() + "': " + line);
        CurveFileRow r;
        r.trial_id = f[0];
        r.parent_env = f[1];
        r.child_env = f[2];
        r.k = f[3];
        r.mode = f[4];
        r.run = std::stoul(f[5]);
        r.row = {std::stoul(f[6]), std::stod(f[7]), std::stod(f[8]), std::stod(f[9])};
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

Report report(const fs::path& in_dir, const fs::path& out_path) {
    if (!fs::is_directory(in_dir)) throw Error("report input '" + in_dir.string() + "' is not a directory");
    // series key -> trial_id -> curve
    struct Group {
        std::string child_env, parent_env, mode;
        std::optional<std::size_t> k;
        std::map<std::string, LearningCurve> trials;
    };
    std::map<std::pair<std::string, std::string>, Group> groups;  // (child_env, series)
    const fs::path out_dir = out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path();
    fs::create_directories(out_dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(in_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::size_t trials = 0;
    for (const auto& file : files) {
        if (fs::equivalent(file.parent_path(), out_dir) &&
            file.filename().string().starts_with(out_path.stem().string()))
            continue;  // our own previous outputs
        for (auto& r : read_curve_csv(file)) {
            const bool baseline = r.mode == "scratch";
            const std::string series =
                baseline ? "baseline"
                         : "child" + r.k + "-" + (r.mode == "freeze" ? "frozen" : "finetuned") + "-" + r.parent_env;
            auto& g = groups[{r.child_env, series}];
            g.child_env = r.child_env;
            g.parent_env = r.parent_env;
            g.mode = r.mode;
            if (!baseline) g.k = std::stoul(r.k);
            auto& curve = g.trials[r.trial_id];
            if (curve.empty()) ++trials;
            curve.push_back(r.row);
        }
    }
    if (trials == 0) throw Error("no completed trials (learning-curve CSVs) found under '" + in_dir.string() + "'");

    Report rep;
    std::map<std::string, double> baseline_final;
    for (auto& [key, g] : groups) {
        SeriesSummary s;
        s.child_env = g.child_env;
        s.series = key.second;
        s.parent_env = g.parent_env;
        s.k = g.k;
        s.mode = g.mode;
        s.runs = g.trials.size();
        std::map<std::size_t, std::vector<double>> by_step;
        std::vector<double> finals;
        for (auto& [id, curve] : g.trials) {
            std::sort(curve.begin(), curve.end(),
                      [](const CurveRow& a, const CurveRow& b) { return a.env_steps < b.env_steps; });
            for (const auto& row : curve) by_step[row.env_steps].push_back(row.eval_return_mean);
            finals.push_back(curve.back().eval_return_mean);
            s.final_env_steps = std::max(s.final_env_steps, curve.back().env_steps);
        }
        std::tie(s.final_mean, s.final_std) = mean_std(finals);
        for (const auto& [step, values] : by_step) {
            const auto [m, sd] = mean_std(values);
            s.mean_curve.push_back({step, m, sd, 0.0});
        }
        if (s.series == "baseline") baseline_final[s.child_env] = s.final_mean;
        rep.series.push_back(std::move(s));
    }
    for (auto& s : rep.series) {
        const auto it = baseline_final.find(s.child_env);
        if (it == baseline_final.end()) continue;
        const double threshold = 0.9 * it->second;
        for (const auto& row : s.mean_curve)
            if (row.eval_return_mean >= threshold) {
                s.steps_to_threshold = row.env_steps;
                break;
            }
    }

    std::string summary = std::string(kSummaryHeader) + "\n";
    std::map<std::string, std::string> plots;
    for (const auto& s : rep.series) {
        summary += s.child_env + "," + s.series + "," + s.parent_env + "," + (s.k ? std::to_string(*s.k) : "") + "," +
                   s.mode + "," + std::to_string(s.runs) + "," + std::to_string(s.final_env_steps) + "," +
                   fmt_double(s.final_mean) + "," + fmt_double(s.final_std) + "," +
                   (s.steps_to_threshold ? std::to_string(*s.steps_to_threshold) : "") + "\n";
        auto& plot = plots[s.child_env];
        if (plot.empty()) plot = std::string(kPlotHeader) + "\n";
        for (const auto& row : s.mean_curve)
            plot += s.series + "," + std::to_string(row.env_steps) + "," + fmt_double(row.eval_return_mean) + "," +
                    fmt_double(row.eval_return_std) + "\n";
    }
    write_text_atomic(summary, out_path);
    for (const auto& [child_env, text] : plots) {
        auto p = out_path;
        p.replace_filename(out_path.stem().string() + "." + child_env + ".plot.csv");
        write_text_atomic(text, p);
        rep.plot_files.push_back(p);
    }
    return rep;
}

}  // namespace rtl::harness
