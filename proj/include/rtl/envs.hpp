#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rtl/tensor.hpp"

namespace rtl::env {

inline constexpr std::size_t kHeight = 10;
inline constexpr std::size_t kWidth = 10;
inline constexpr std::size_t kCells = kHeight * kWidth;
inline constexpr std::size_t kActions = 5;
inline constexpr std::size_t kMaxEpisodeSteps = 200;
inline constexpr std::size_t kHistory = 4;

enum class Cell : std::uint8_t { empty = 0, hazard = 1, goal = 2, agent = 3 };

/// Rendered intensity: empty 0, hazard 0.33, goal 0.66, agent 1.0.
double intensity(Cell c);

enum Action : std::size_t { noop = 0, up = 1, down = 2, left = 3, right = 4 };

struct Pos {
    int row = 0;
    int col = 0;
    friend bool operator==(Pos, Pos) = default;
};

Pos moved(Pos p, std::size_t action);
bool in_bounds(Pos p);

/// One 10x10 single-channel frame, stored as cell kinds.
class Frame {
public:
    Cell at(int row, int col) const { return static_cast<Cell>(cells_[index(row, col)]); }
    void set(int row, int col, Cell c) { cells_[index(row, col)] = static_cast<std::uint8_t>(c); }
    void set(Pos p, Cell c) { set(p.row, p.col, c); }
    double value(int row, int col) const { return intensity(at(row, col)); }
    /// Writes kCells intensities in row-major order.
    void render(double* dst) const;
    nn::Tensor to_tensor() const;
    const std::array<std::uint8_t, kCells>& cells() const { return cells_; }

    friend bool operator==(const Frame&, const Frame&) = default;

private:
    static std::size_t index(int row, int col) {
        return static_cast<std::size_t>(row) * kWidth + static_cast<std::size_t>(col);
    }
    std::array<std::uint8_t, kCells> cells_{};
};

struct EnvSpec {
    std::size_t height = kHeight;
    std::size_t width = kWidth;
    std::size_t channels = 1;
    std::size_t n_actions = kActions;
    std::size_t max_episode_steps = kMaxEpisodeSteps;
    friend bool operator==(const EnvSpec&, const EnvSpec&) = default;
};

struct StepResult {
    Frame frame;
    double reward = 0.0;
    bool terminal = false;
    bool truncated = false;  // terminal only because of the step cap
};

/// Deterministic-given-seed episodic environment. Subclasses implement the
/// rules; the base enforces the action range, the step cap and
/// no-step-after-terminal.
class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string name() const = 0;
    EnvSpec spec() const { return {}; }

    Frame reset(std::uint64_t seed);
    StepResult step(std::size_t action);

    bool done() const { return done_; }
    std::size_t steps() const { return steps_; }
    virtual Frame render() const = 0;

protected:
    virtual void on_reset(std::mt19937_64& rng) = 0;
    /// Applies one action; returns (reward, natural terminal).
    virtual std::pair<double, bool> on_step(std::size_t action, std::mt19937_64& rng) = 0;
    std::size_t step_count() const { return steps_; }

private:
    std::mt19937_64 rng_;
    std::size_t steps_ = 0;
    bool started_ = false;
    bool done_ = false;
};

/// Static goal at the far end of the grid, one static hazard.
class CorridorEnv final : public Environment {
public:
    static constexpr Pos kGoal{4, 9};
    static constexpr int kHazardCol = 5;

    std::string name() const override { return "corridor"; }
    Frame render() const override;
    Pos agent() const { return agent_; }
    Pos goal() const { return kGoal; }
    Pos hazard() const { return hazard_; }

protected:
    void on_reset(std::mt19937_64& rng) override;
    std::pair<double, bool> on_step(std::size_t action, std::mt19937_64& rng) override;

private:
    Pos agent_;
    Pos hazard_;
};

/// Goal relocates every 20 steps and respawns when reached; two static hazards.
class ChaseEnv final : public Environment {
public:
    static constexpr std::size_t kRelocatePeriod = 20;

    std::string name() const override { return "chase"; }
    Frame render() const override;
    Pos agent() const { return agent_; }
    Pos goal() const { return goal_; }
    const std::array<Pos, 2>& hazards() const { return hazards_; }

protected:
    void on_reset(std::mt19937_64& rng) override;
    std::pair<double, bool> on_step(std::size_t action, std::mt19937_64& rng) override;

private:
    Pos free_cell(std::mt19937_64& rng) const;
    Pos agent_;
    Pos goal_;
    std::array<Pos, 2> hazards_;
};

/// Hazard rows with a gap scroll down one row every 2 steps; the agent lives
/// in the bottom three rows and earns a survival bonus.
class RiverEnv final : public Environment {
public:
    static constexpr int kTopAgentRow = 7;
    static constexpr std::size_t kScrollPeriod = 2;
    static constexpr std::size_t kSpawnEvery = 4;  // scrolls between hazard rows
    static constexpr int kGapWidth = 3;
    static constexpr double kSurvivalReward = 0.05;

    std::string name() const override { return "river"; }
    Frame render() const override;
    Pos agent() const { return agent_; }
    bool hazard_at(Pos p) const { return hazards_[static_cast<std::size_t>(p.row)][static_cast<std::size_t>(p.col)]; }

protected:
    void on_reset(std::mt19937_64& rng) override;
    std::pair<double, bool> on_step(std::size_t action, std::mt19937_64& rng) override;

private:
    std::array<bool, kWidth> hazard_row(std::mt19937_64& rng) const;
    void scroll(std::mt19937_64& rng);

    Pos agent_;
    std::array<std::array<bool, kWidth>, kHeight> hazards_{};
    std::size_t scrolls_ = 0;
};

std::unique_ptr<Environment> make_env(std::string_view name);
const std::vector<std::string>& env_names();

/// The last kHistory frames, oldest first.
class Observation {
public:
    Observation() = default;
    explicit Observation(const Frame& f) { frames_.fill(f); }

    const Frame& frame(std::size_t i) const { return frames_[i]; }
    const std::array<Frame, kHistory>& frames() const { return frames_; }
    void shift_in(const Frame& f);
    /// Writes kHistory * kCells intensities (channel-major).
    void render(double* dst) const;
    /// Shape [kHistory, kHeight, kWidth].
    nn::Tensor to_tensor() const;

    friend bool operator==(const Observation&, const Observation&) = default;

private:
    std::array<Frame, kHistory> frames_{};
};

class FrameStack {
public:
    const Observation& reset(const Frame& initial);
    const Observation& push(const Frame& f);
    const Observation& observation() const { return obs_; }

private:
    Observation obs_;
};

/// Stacks observations into a [batch, kHistory, kHeight, kWidth] tensor.
nn::Tensor batch_tensor(const std::vector<const Observation*>& obs);

}  // namespace rtl::env
