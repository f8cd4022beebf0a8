// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes. Pass criterion numbers as arguments to run
// a subset, e.g. `acceptance 1 2 3`.
#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rtl/agent.hpp"
#include "rtl/checkpoint.hpp"
#include "rtl/error.hpp"
#include "rtl/harness.hpp"
#include "rtl/replay.hpp"
#include "rtl/surgery.hpp"

using namespace rtl;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += "failed: " + what;
        }
    }
    void note(const std::string& s) {
        if (!detail.empty()) detail += "; ";
        detail += s;
    }
};

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

fs::path work_root() {
    static const fs::path root = [] {
        auto p = fs::temp_directory_path() / "rtl_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

fs::path workdir(const std::string& name) {
    auto p = work_root() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::vector<std::string> out;
    std::istringstream in(slurp(p));
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

bool bits_equal(const nn::Tensor& a, const nn::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

bool layer_equal(const nn::Network& a, const nn::Network& b, const nn::Layer& layer) {
    const auto& other = b.layers()[b.layer_index(layer.name)];
    for (std::size_t p = 0; p < layer.params.size(); ++p)
        if (!bits_equal(a.layers()[a.layer_index(layer.name)].params[p].value, other.params[p].value)) return false;
    return true;
}

// 1. Analytic gradients against central finite differences.
Verdict gradient_oracle() {
    Verdict v;
    std::mt19937_64 rng(2019);
    for (auto type : {nn::LayerType::conv2d, nn::LayerType::dense, nn::LayerType::noisy_dense}) {
        double worst = 0.0;
        const int configs = 25;
        for (int c = 0; c < configs; ++c) {
            nn::Network net(oracle::random_single_layer(type, rng));
            net.initialize(rng());
            const std::size_t batch = 1 + rng() % 3;
            nn::Shape in{batch};
            in.insert(in.end(), net.input_shape().begin(), net.input_shape().end());
            const auto x = oracle::random_tensor(in, rng);
            const auto probe = net.forward(x).output;
            const auto target = oracle::random_tensor(probe.shape(), rng);
            nn::NoiseDraw noise;
            if (type == nn::LayerType::noisy_dense) noise = net.sample_noise(rng);
            worst = std::max(worst, oracle::gradient_check(net, x, noise.empty() ? nullptr : &noise, target));
        }
        v.require(worst < 1e-5, std::string(nn::to_string(type)) + " worst relative error " + std::to_string(worst));
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s: %d configs, worst rel err %.2e", std::string(nn::to_string(type)).c_str(),
                      configs, worst);
        v.note(buf);
    }
    return v;
}

// 2. Categorical projection against the triangular-kernel oracle.
Verdict projection_oracle() {
    Verdict v;
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0, worst_sum = 0.0;
    int clamped = 0, terminal = 0;
    for (int c = 0; c < 1000; ++c) {
        const std::size_t n = 2 + rng() % 50;
        const double vmin = -0.5 - 20.0 * u(rng);
        const double vmax = 0.5 + 20.0 * u(rng);
        const agent::AtomSupport support(n, vmin, vmax);
        std::vector<double> row(n);
        for (auto& x : row) x = u(rng) * u(rng);
        const double total = std::accumulate(row.begin(), row.end(), 0.0);
        for (auto& x : row) x /= total;
        const double reward = (u(rng) - 0.5) * 3.0 * (vmax - vmin);
        const double discount = c % 4 == 0 ? 0.0 : u(rng);
        terminal += discount == 0.0;
        const std::vector<double> atoms(support.atoms().begin(), support.atoms().end());
        bool any_clamp = false;
        for (double z : atoms) any_clamp |= reward + discount * z < vmin || reward + discount * z > vmax;
        clamped += any_clamp;
        const auto got = agent::categorical_project(row, reward, discount, support);
        const auto want = oracle::project_bruteforce(atoms, row, reward, discount);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            worst = std::max(worst, std::abs(got[i] - want[i]));
            s += got[i];
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    v.require(worst <= 1e-12, "max deviation " + std::to_string(worst));
    v.require(worst_sum <= 1e-12, "mass deviation " + std::to_string(worst_sum));
    v.require(clamped > 0 && terminal > 0, "case mix lacks clamping or terminal cases");
    char buf[128];
    std::snprintf(buf, sizeof buf, "1000 cases (%d clamping, %d terminal), max err %.1e, max |sum-1| %.1e", clamped,
                  terminal, worst, worst_sum);
    v.note(buf);
    return v;
}

// 3. Sum-tree consistency and sampling frequencies.
Verdict sum_tree_oracle() {
    Verdict v;
    replay::PrioritizedReplay buffer({.capacity = 1000, .alpha = 0.6});
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    std::size_t ops = 0;
    while (ops < 10'000) {
        if (buffer.size() == 0 || rng() % 2 == 0) {
            buffer.push(replay::Transition{}, rng() % 3 == 0 ? std::optional<double>(u(rng)) : std::nullopt);
        } else {
            std::vector<std::size_t> idx(1 + rng() % 8);
            std::vector<double> err(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                idx[i] = rng() % buffer.size();
                err[i] = u(rng);
            }
            buffer.update_priorities(idx, err);
        }
        ++ops;
    }
    const auto& tree = buffer.tree();
    // Recompute the root from the leaves, independently of the tree's own sums.
    double recomputed = 0.0;
    for (std::size_t i = 0; i < tree.capacity(); ++i) recomputed += tree.get(i);
    v.require(std::abs(recomputed - tree.total()) <= 1e-9, "root differs from leaf sum");
    v.require(tree.max_inconsistency() <= 1e-9, "internal node inconsistent");

    replay::PrioritizedReplay pair({.capacity = 2, .alpha = 1.0, .beta0 = 0.4, .priority_epsilon = 1e-6});
    pair.push(replay::Transition{}, 1.0);
    pair.push(replay::Transition{}, 3.0);
    const int draws = 100'000;
    int ones = 0;
    std::mt19937_64 srng(11);
    for (int i = 0; i < draws; ++i) ones += pair.sample(1, 0.4, srng).indices[0] == 1;
    const double p1 = (3.0 + 1e-6) / (4.0 + 2e-6);
    const double e1 = draws * p1, e0 = draws - e1;
    const double stat = std::pow(ones - e1, 2) / e1 + std::pow(draws - ones - e0, 2) / e0;
    const double p = oracle::chi_square_p_1dof(stat);
    v.require(p > 0.01, "chi-square p = " + std::to_string(p));
    char buf[160];
    std::snprintf(buf, sizeof buf, "10000 ops, |root-recompute| %.1e; %d/%d draws on priority 3, chi2 %.3f p %.3f",
                  std::abs(recomputed - tree.total()), ones, draws, stat, p);
    v.note(buf);
    return v;
}

// 4. n-step folding against direct sums.
Verdict nstep_oracle() {
    Verdict v;
    auto obs_for = [](std::size_t i) {
        env::Frame f;
        f.set(static_cast<int>(i / env::kWidth % env::kHeight), static_cast<int>(i % env::kWidth), env::Cell::agent);
        return env::Observation(f);
    };
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> rew(-1.0, 1.0);
    double worst = 0.0;
    int early = 0;
    for (int traj = 0; traj < 100; ++traj) {
        const std::size_t n = 1 + rng() % 5;
        const double gamma = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const std::size_t T = 1 + rng() % 40;
        const bool terminal = traj % 4 != 0;
        early += terminal && T < n;
        std::vector<double> rewards(T);
        for (auto& r : rewards) r = rew(rng);
        replay::NStepFolder folder(n, gamma);
        std::vector<replay::Transition> got;
        for (std::size_t t = 0; t < T; ++t)
            for (auto& tr : folder.push({obs_for(t), t % env::kActions, rewards[t], obs_for(t + 1), terminal && t + 1 == T}))
                got.push_back(std::move(tr));
        const auto want = oracle::nstep_direct(rewards, n, gamma, terminal);
        if (got.size() != want.size()) {
            v.require(false, "trajectory " + std::to_string(traj) + " yields a different number of transitions");
            continue;
        }
        for (std::size_t i = 0; i < got.size(); ++i) {
            double scale = 0.0;
            for (std::size_t j = 0; j < want[i].n_actual; ++j) scale += std::abs(rewards[i + j]);
            const double err = std::abs(got[i].ret - want[i].ret);
            worst = std::max(worst, err / std::max(scale, 1e-300));
            v.require(err <= 8 * std::numeric_limits<double>::epsilon() * std::max(scale, 1.0),
                      "return mismatch in trajectory " + std::to_string(traj));
            v.require(got[i].n_actual == want[i].n_actual && got[i].terminal == want[i].terminal &&
                          got[i].state == obs_for(i) && got[i].next_state == obs_for(want[i].next_index),
                      "transition bookkeeping in trajectory " + std::to_string(traj));
        }
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "100 trajectories (%d end before n steps), worst relative error %.1e", early, worst);
    v.note(buf);
    return v;
}

// 5. Transplant prefix equality, freeze persistence and finetune drift.
Verdict transplant_contracts() {
    Verdict v;
    agent::AgentConfig cfg;
    const auto arch = agent::agent_network_spec(cfg);
    nn::Network parent_src(arch);
    parent_src.initialize(31337);
    const auto parent = surgery::to_network(surgery::make_checkpoint(parent_src, {.env = "corridor"}), arch);

    // Replay filled by a uniform-random policy on CORRIDOR.
    replay::PrioritizedReplay filled({.capacity = 10'000});
    {
        auto e = env::make_env("corridor");
        std::mt19937_64 rng(5);
        replay::NStepFolder folder(cfg.n_step, cfg.gamma);
        env::FrameStack stack;
        stack.reset(e->reset(rng()));
        for (int t = 0; t < 4000; ++t) {
            const env::Observation obs = stack.observation();
            const std::size_t a = rng() % env::kActions;
            const auto r = e->step(a);
            const auto& next = stack.push(r.frame);
            for (auto& tr : folder.push({obs, a, r.reward, next, r.terminal})) filled.push(std::move(tr));
            if (r.terminal) stack.reset(e->reset(rng()));
        }
    }

    const std::size_t steps = 2000;
    for (std::size_t k : {0, 2, 4, 5}) {
        for (auto mode : {surgery::TransplantMode::freeze, surgery::TransplantMode::finetune}) {
            const std::string tag = "k=" + std::to_string(k) + " " + std::string(surgery::to_string(mode));
            auto t = surgery::transplant(parent, {.k = k, .mode = mode, .reinit_seed = 1000 + k});
            std::size_t prefix_layers = 0;
            for (const auto& l : parent.layers())
                if (l.depth <= k) {
                    ++prefix_layers;
                    v.require(layer_equal(parent, t.child, l), tag + ": " + l.name + " differs at construction");
                }
            nn::FreezeMask expect_mask;
            if (mode == surgery::TransplantMode::freeze)
                for (const auto& l : parent.layers())
                    if (l.depth <= k) expect_mask.insert(l.name);
            v.require(t.mask == expect_mask, tag + ": freeze mask");

            const nn::Network start = t.child;
            agent::Agent agent(cfg, std::move(t.child), 77 + k);
            auto buffer = filled;
            std::size_t trained = 0;
            for (std::size_t s = 0; s < steps; ++s)
                if (agent.train_step(buffer, replay::beta_at(0.4, s, steps), &t.mask)) ++trained;
            v.require(trained == steps, tag + ": only " + std::to_string(trained) + " train steps ran");

            bool prefix_same = true, prefix_moved = false, rest_moved = false;
            for (const auto& l : parent.layers()) {
                const bool same = layer_equal(parent, agent.online(), l);
                if (l.depth <= k) {
                    prefix_same = prefix_same && same;
                    prefix_moved = prefix_moved || !same;
                } else {
                    rest_moved = rest_moved || !layer_equal(start, agent.online(), l);
                }
            }
            if (mode == surgery::TransplantMode::freeze) {
                v.require(prefix_same, tag + ": a transplanted layer changed");
                v.require(surgery::frozen_layers_equal(parent, agent.online(), t.mask), tag + ": freeze audit");
                if (k < 5) v.require(rest_moved, tag + ": trainable layers never moved");
            } else if (k > 0) {
                v.require(prefix_moved, tag + ": no transplanted parameter changed");
            } else {
                // No layer is transplanted at k=0; the drift condition has nothing to range over.
                v.require(prefix_layers == 0 && rest_moved, tag + ": k=0 child did not train");
            }
        }
    }
    v.note("k in {0,2,4,5} x {freeze, finetune}, " + std::to_string(steps) + " train steps each");
    return v;
}

// 6. Identity transplant reproduces the parent's final evaluation exactly.
Verdict identity_transplant() {
    Verdict v;
    const auto dir = workdir("c6");
    harness::TrainConfig cfg;
    const auto parent = harness::train_parent("corridor", 5000, 606, dir / "parent.ckpt", cfg);
    const auto rec = harness::run_child(dir / "parent.ckpt",
                                        {.child_env = "corridor", .k = 5, .mode = surgery::TransplantMode::finetune,
                                         .seed = 6060, .steps = 1000, .run = 0},
                                        dir, cfg);
    const auto& p = parent.record.curve.back();
    const auto& c = rec.curve.front();
    v.require(c.env_steps == 0, "first child row is not at step 0");
    v.require(c.eval_return_mean == p.eval_return_mean, "mean " + std::to_string(c.eval_return_mean) +
                                                            " != parent " + std::to_string(p.eval_return_mean));
    v.require(c.eval_return_std == p.eval_return_std, "std differs");
    v.require(rec.transplant && rec.transplant->pass, "child is not a bitwise copy of the parent");
    v.note("parent final " + fixed(p.eval_return_mean, 4) + " +- " + fixed(p.eval_return_std, 4) + ", child step 0 " +
           fixed(c.eval_return_mean, 4) + " +- " + fixed(c.eval_return_std, 4));
    return v;
}

// 7. Default grid size.
Verdict grid_arithmetic() {
    Verdict v;
    const auto plan = harness::plan_grid(harness::ExperimentGrid{});
    std::size_t parents = 0;
    std::set<std::string> ids;
    for (const auto& t : plan) {
        parents += t.parent;
        ids.insert(t.trial_id);
    }
    v.require(plan.size() == 111, "planned " + std::to_string(plan.size()));
    v.require(parents == 3 && plan.size() - parents == 108, "parent/child split");
    v.require(ids.size() == plan.size(), "duplicate trial ids");
    v.note(std::to_string(plan.size()) + " trials = " + std::to_string(plan.size() - parents) + " children + " +
           std::to_string(parents) + " parents");
    return v;
}

// 8. A CORRIDOR parent learns something an untrained network does not.
Verdict learning_signal() {
    Verdict v;
    const auto dir = workdir("c8");
    const harness::TrainConfig cfg;
    const auto make_env = harness::env_factory("corridor");
    const std::vector<std::uint64_t> seeds{1, 2, 3};

    std::vector<double> untrained;
    for (auto s : seeds) {
        agent::Agent fresh(cfg.agent, s);
        fresh.mutable_online().round_to_float();  // same precision as the trained parents' final evaluation
        untrained.push_back(harness::evaluate(fresh, make_env, cfg.eval_episodes, cfg.eval_seed).mean);
    }
    const double base = median3(untrained);

    std::vector<double> trained;
    for (auto s : seeds) {
        const auto res = harness::train_parent("corridor", 50'000, s, dir / ("seed" + std::to_string(s) + ".ckpt"), cfg);
        trained.push_back(res.record.curve.back().eval_return_mean);
        std::cout << "    seed " << s << ": untrained " << fixed(untrained[trained.size() - 1]) << ", trained "
                  << fixed(trained.back()) << std::endl;
    }
    const double med = median3(trained);
    v.require(med > base, "trained median " + fixed(med) + " not above untrained " + fixed(base));
    v.note("untrained median " + fixed(base) + ", trained median " + fixed(med) + " over seeds 1-3");
    return v;
}

// 9. Mini-grid end to end.
Verdict mini_grid() {
    Verdict v;
    const auto dir = workdir("c9");
    harness::ExperimentGrid g;
    g.envs = {"corridor", "chase"};
    g.k_values = {2};
    g.modes = {surgery::TransplantMode::freeze, surgery::TransplantMode::finetune};
    g.runs_per_cell = 1;
    g.parent_steps = 5000;
    g.child_steps = 5000;
    g.eval_interval = 1000;
    g.eval_episodes = 10;
    g.base_seed = 9;

    const std::size_t expected = g.envs.size() * g.envs.size() * g.k_values.size() * g.modes.size() * g.runs_per_cell +
                                 g.envs.size();
    const auto first = harness::run_grid(g, dir, 2);
    v.require(first.planned == expected, "planned " + std::to_string(first.planned));
    v.require(first.failed == 0 && first.executed == expected, "first pass executed " +
                                                                   std::to_string(first.executed) + ", failed " +
                                                                   std::to_string(first.failed));
    for (const auto& f : first.failures) v.note(f);

    const std::regex child_grammar(R"(child[0-9]+-(frozen|finetuned)-[a-z]+--on-[a-z]+--run[0-9]+)");
    const std::regex parent_grammar(R"(parent-[a-z]+--run[0-9]+)");
    std::map<fs::path, std::string> snapshot;
    std::size_t csvs = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".csv") continue;
        ++csvs;
        snapshot[e.path()] = slurp(e.path());
        const auto lines = lines_of(e.path());
        v.require(!lines.empty() && lines[0] == harness::kCurveHeader, e.path().filename().string() + ": header");
        std::size_t last_step = 0;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const auto f = split(lines[i], ',');
            if (f.size() != 10) {
                v.require(false, e.path().filename().string() + ": row with " + std::to_string(f.size()) + " fields");
                continue;
            }
            const bool is_child = std::regex_match(f[0], child_grammar);
            v.require(is_child || std::regex_match(f[0], parent_grammar), "trial id '" + f[0] + "'");
            v.require(e.path().stem() == f[0], "file " + e.path().filename().string() + " holds " + f[0]);
            v.require(is_child ? f[3] == "2" && (f[4] == "freeze" || f[4] == "finetune")
                               : f[3].empty() && f[4] == "scratch" && f[1] == f[2],
                      "k/mode columns of " + f[0]);
            const std::size_t step = std::stoul(f[6]);
            v.require(i == 1 ? step == 0 : step > last_step, f[0] + ": env_steps not increasing");
            last_step = step;
            for (int col : {7, 8, 9}) {
                std::size_t pos = 0;
                const double x = std::stod(f[col], &pos);
                v.require(pos == f[col].size() && std::isfinite(x), f[0] + ": non-numeric field");
            }
        }
        v.require(last_step == 5000, e.path().filename().string() + ": last row at " + std::to_string(last_step));
    }
    v.require(csvs == expected, std::to_string(csvs) + " curve files");

    const auto rep = harness::report(dir, dir / "report" / "summary.csv");
    v.require(rep.plot_files.size() == g.envs.size(), "plot files");
    for (const auto& p : rep.plot_files) {
        const auto lines = lines_of(p);
        v.require(!lines.empty() && lines[0] == "series,env_steps,mean,std", p.filename().string() + ": header");
        for (std::size_t i = 1; i < lines.size(); ++i)
            v.require(split(lines[i], ',').size() == 4, p.filename().string() + ": row width");
    }
    v.require(lines_of(dir / "report" / "summary.csv").at(0) == harness::kSummaryHeader, "summary header");

    const auto second = harness::run_grid(g, dir, 2);
    v.require(second.executed == 0 && second.skipped == expected, "resume executed " + std::to_string(second.executed));
    for (const auto& [path, text] : snapshot) v.require(slurp(path) == text, path.filename().string() + " changed");

    v.note(std::to_string(expected) + " trials (" + std::to_string(expected - g.envs.size()) + " children + " +
           std::to_string(g.envs.size()) + " parents), " + std::to_string(g.parent_steps) +
           " steps each; resume executed " + std::to_string(second.executed));
    return v;
}

// 10. Checkpoint round trip and failure modes.
Verdict checkpoint_contracts() {
    Verdict v;
    const auto dir = workdir("c10");
    agent::AgentConfig cfg;
    nn::Network net(agent::agent_network_spec(cfg));
    net.initialize(1010);
    std::mt19937_64 rng(3);
    for (const auto& name : net.parameter_names())
        for (auto& x : net.mutable_param(name).data()) x += std::normal_distribution<double>(0.0, 1e-3)(rng);

    surgery::save(net, {.env = "river", .training_steps = 42, .seed = 7}, dir / "net.ckpt");
    const auto ck = surgery::load(dir / "net.ckpt", net.architecture_hash());
    std::size_t mismatched = 0, checked = 0;
    for (const auto& name : net.parameter_names()) {
        nn::Tensor expect = net.param(name);
        for (auto& x : expect.data()) x = static_cast<double>(static_cast<float>(x));
        const auto it = ck.tensors.find(name);
        ++checked;
        if (it == ck.tensors.end() || !bits_equal(it->second, expect)) ++mismatched;
    }
    v.require(mismatched == 0 && checked == ck.tensors.size(), std::to_string(mismatched) + " tensors differ");
    const auto bytes = slurp(dir / "net.ckpt");
    surgery::save(ck, dir / "again.ckpt");
    v.require(slurp(dir / "again.ckpt") == bytes, "re-save is not byte identical");

    auto expect_failure = [&](const std::string& label, const std::string& content,
                              const std::optional<std::string>& hash, int want) {
        const auto p = dir / (label + ".ckpt");
        std::ofstream(p, std::ios::binary) << content;
        int got = -1;
        std::string msg;
        try {
            surgery::load(p, hash);
            got = 0;
        } catch (const ArchitectureMismatch& e) {
            got = 1;
            msg = e.what();
        } catch (const VersionError& e) {
            got = 2;
            msg = e.what();
        } catch (const FormatError& e) {
            got = 3;
            msg = e.what();
        } catch (const std::exception& e) {
            got = 4;
            msg = e.what();
        }
        v.require(got == want, label + " raised kind " + std::to_string(got) + " (" + msg + ")");
        return msg;
    };
    std::string corrupt = bytes;
    corrupt[corrupt.size() / 2] = static_cast<char>(corrupt[corrupt.size() / 2] ^ 0x10);
    expect_failure("corrupt", corrupt, std::nullopt, 3);
    expect_failure("truncated", bytes.substr(0, bytes.size() - 100), std::nullopt, 3);
    std::string version = bytes;
    version[3] = '9';
    expect_failure("version", version, std::nullopt, 2);
    const std::string wrong_hash = "feedfacecafebeef";
    const auto msg = expect_failure("hash", bytes, wrong_hash, 1);
    v.require(msg.find(wrong_hash) != std::string::npos && msg.find(net.architecture_hash()) != std::string::npos,
              "hash mismatch message does not name both hashes");
    v.note(std::to_string(checked) + " tensors bitwise equal at f32; corrupt/truncated -> FormatError, "
           "version -> VersionError, hash -> ArchitectureMismatch");
    return v;
}

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;  // 0 = no runtime bound
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "gradient oracle", 30, gradient_oracle},
        {2, "categorical projection", 10, projection_oracle},
        {3, "sum tree", 30, sum_tree_oracle},
        {4, "n-step fold", 0, nstep_oracle},
        {5, "transplant and freeze contracts", 300, transplant_contracts},
        {6, "identity transplant policy equivalence", 0, identity_transplant},
        {7, "grid arithmetic", 0, grid_arithmetic},
        {8, "learning signal on corridor", 1200, learning_signal},
        {9, "end-to-end mini-grid", 3600, mini_grid},
        {10, "checkpoint round trip", 0, checkpoint_contracts},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    std::vector<std::string> lines;
    bool all_pass = true;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.contains(c.id)) continue;
        std::cout << "running criterion " << c.id << " (" << c.name << ")" << std::endl;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_seconds > 0) v.require(secs < c.budget_seconds, "runtime over " + fixed(c.budget_seconds, 0) + " s");
        const std::string line = "CRITERION " + std::to_string(c.id) + " " + (v.pass ? "PASS" : "FAIL") + " [" +
                                 c.name + "] " + fixed(secs, 1) + " s: " + v.detail;
        std::cout << line << std::endl;
        lines.push_back(line);
        all_pass = all_pass && v.pass;
    }
    std::cout << "\n==== acceptance summary ====\n";
    for (const auto& l : lines) std::cout << l << "\n";
    std::cout << (all_pass ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
    return all_pass ? 0 : 1;
}
