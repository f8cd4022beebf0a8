#include "rtl/envs.hpp"

#include <algorithm>
#include <tuple>

#include "rtl/error.hpp"
#include "rtl/hash.hpp"

namespace rtl::env {

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

double intensity(Cell c) {
    switch (c) {
        case Cell::empty: return 0.0;
        case Cell::hazard: return 0.33;
        case Cell::goal: return 0.66;
        case Cell::agent: return 1.0;
    }
    return 0.0;
}

Pos moved(Pos p, std::size_t action) {
    switch (action) {
        case up: --p.row; break;
        case down: ++p.row; break;
        case left: --p.col; break;
        case right: ++p.col; break;
        default: break;
    }
    return p;
}

bool in_bounds(Pos p) {
    return p.row >= 0 && p.col >= 0 && p.row < static_cast<int>(kHeight) && p.col < static_cast<int>(kWidth);
}

void Frame::render(double* dst) const {
    for (std::size_t i = 0; i < kCells; ++i) dst[i] = intensity(static_cast<Cell>(cells_[i]));
}

nn::Tensor Frame::to_tensor() const {
    nn::Tensor t({kHeight, kWidth});
    render(t.data().data());
    return t;
}

Frame Environment::reset(std::uint64_t seed) {
    rng_.seed(mix64(seed ^ fnv1a64(name())));
    steps_ = 0;
    started_ = true;
    done_ = false;
    on_reset(rng_);
    return render();
}

StepResult Environment::step(std::size_t action) {
    if (!started_) throw StateError(name() + ": step() before reset()");
    if (done_) throw StateError(name() + ": step() after terminal; call reset()");
    if (action >= kActions)
        throw Error(name() + ": action " + std::to_string(action) + " outside [0, " + std::to_string(kActions) + ")");
    ++steps_;
    StepResult r;
    std::tie(r.reward, r.terminal) = on_step(action, rng_);
    if (!r.terminal && steps_ >= kMaxEpisodeSteps) {
        r.reward = 0.0;
        r.terminal = true;
        r.truncated = true;
    }
    done_ = r.terminal;
    r.frame = render();
    return r;
}

// CORRIDOR

void CorridorEnv::on_reset(std::mt19937_64& rng) {
    agent_ = {uniform_int(rng, 0, static_cast<int>(kHeight) - 1), 0};
    hazard_ = {uniform_int(rng, 0, static_cast<int>(kHeight) - 1), kHazardCol};
}

std::pair<double, bool> CorridorEnv::on_step(std::size_t action, std::mt19937_64&) {
    const Pos next = moved(agent_, action);
    if (!in_bounds(next)) return {0.0, false};
    agent_ = next;
    if (agent_ == kGoal) return {1.0, true};
    if (agent_ == hazard_) return {-1.0, true};
    return {0.0, false};
}

Frame CorridorEnv::render() const {
    Frame f;
    f.set(kGoal, Cell::goal);
    f.set(hazard_, Cell::hazard);
    f.set(agent_, Cell::agent);
    return f;
}

// CHASE

Pos ChaseEnv::free_cell(std::mt19937_64& rng) const {
    for (;;) {
        const Pos p{uniform_int(rng, 0, static_cast<int>(kHeight) - 1), uniform_int(rng, 0, static_cast<int>(kWidth) - 1)};
        if (p != agent_ && p != hazards_[0] && p != hazards_[1]) return p;
    }
}

void ChaseEnv::on_reset(std::mt19937_64& rng) {
    agent_ = {-1, -1};
    hazards_ = {Pos{-1, -1}, Pos{-1, -1}};
    hazards_[0] = free_cell(rng);
    hazards_[1] = free_cell(rng);
    agent_ = free_cell(rng);
    goal_ = free_cell(rng);
}

std::pair<double, bool> ChaseEnv::on_step(std::size_t action, std::mt19937_64& rng) {
    const Pos next = moved(agent_, action);
    if (in_bounds(next)) agent_ = next;
    if (agent_ == hazards_[0] || agent_ == hazards_[1]) return {-1.0, true};
    double reward = 0.0;
    if (agent_ == goal_) {
        reward = 1.0;
        goal_ = free_cell(rng);
    }
    if (step_count() % kRelocatePeriod == 0) goal_ = free_cell(rng);
    return {reward, false};
}

Frame ChaseEnv::render() const {
    Frame f;
    for (const auto& h : hazards_) f.set(h, Cell::hazard);
    f.set(goal_, Cell::goal);
    f.set(agent_, Cell::agent);
    return f;
}

// RIVER

std::array<bool, kWidth> RiverEnv::hazard_row(std::mt19937_64& rng) const {
    std::array<bool, kWidth> row;
    row.fill(true);
    const int gap = uniform_int(rng, 0, static_cast<int>(kWidth) - kGapWidth);
    for (int c = gap; c < gap + kGapWidth; ++c) row[static_cast<std::size_t>(c)] = false;
    return row;
}

void RiverEnv::scroll(std::mt19937_64& rng) {
    for (std::size_t r = kHeight - 1; r > 0; --r) hazards_[r] = hazards_[r - 1];
    ++scrolls_;
    if (scrolls_ % kSpawnEvery == 0)
        hazards_[0] = hazard_row(rng);
    else
        hazards_[0].fill(false);
}

void RiverEnv::on_reset(std::mt19937_64& rng) {
    for (auto& row : hazards_) row.fill(false);
    scrolls_ = 0;
    hazards_[0] = hazard_row(rng);
    hazards_[kSpawnEvery] = hazard_row(rng);
    agent_ = {static_cast<int>(kHeight) - 1, uniform_int(rng, 0, static_cast<int>(kWidth) - 1)};
}

std::pair<double, bool> RiverEnv::on_step(std::size_t action, std::mt19937_64& rng) {
    const Pos next = moved(agent_, action);
    if (in_bounds(next) && next.row >= kTopAgentRow) agent_ = next;
    if (hazard_at(agent_)) return {-1.0, true};
    if (step_count() % kScrollPeriod == 0) {
        scroll(rng);
        if (hazard_at(agent_)) return {-1.0, true};
    }
    return {kSurvivalReward, false};
}

Frame RiverEnv::render() const {
    Frame f;
    for (std::size_t r = 0; r < kHeight; ++r)
        for (std::size_t c = 0; c < kWidth; ++c)
            if (hazards_[r][c]) f.set(static_cast<int>(r), static_cast<int>(c), Cell::hazard);
    f.set(agent_, Cell::agent);
    return f;
}

std::unique_ptr<Environment> make_env(std::string_view name) {
    if (name == "corridor") return std::make_unique<CorridorEnv>();
    if (name == "chase") return std::make_unique<ChaseEnv>();
    if (name == "river") return std::make_unique<RiverEnv>();
    throw ConfigError("unknown environment '" + std::string(name) + "' (expected corridor, chase or river)");
}

const std::vector<std::string>& env_names() {
    static const std::vector<std::string> names{"corridor", "chase", "river"};
    return names;
}

void Observation::shift_in(const Frame& f) {
    std::shift_left(frames_.begin(), frames_.end(), 1);
    frames_.back() = f;
}

void Observation::render(double* dst) const {
    for (std::size_t i = 0; i < kHistory; ++i) frames_[i].render(dst + i * kCells);
}

nn::Tensor Observation::to_tensor() const {
    nn::Tensor t({kHistory, kHeight, kWidth});
    render(t.data().data());
    return t;
}

const Observation& FrameStack::reset(const Frame& initial) {
    obs_ = Observation(initial);
    return obs_;
}

const Observation& FrameStack::push(const Frame& f) {
    obs_.shift_in(f);
    return obs_;
}

nn::Tensor batch_tensor(const std::vector<const Observation*>& obs) {
    if (obs.empty()) throw ShapeError("cannot batch zero observations");
    nn::Tensor t({obs.size(), kHistory, kHeight, kWidth});
    for (std::size_t b = 0; b < obs.size(); ++b) obs[b]->render(t.data().data() + b * kHistory * kCells);
    return t;
}

}  // namespace rtl::env
