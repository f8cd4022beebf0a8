#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rtl/envs.hpp"
#include "rtl/nn.hpp"
#include "rtl/replay.hpp"

namespace rtl::agent {

/// Fixed categorical support z_i = v_min + i * (v_max - v_min) / (n - 1).
class AtomSupport {
public:
    AtomSupport(std::size_t n_atoms, double v_min, double v_max);

    std::size_t size() const { return atoms_.size(); }
    double v_min() const { return v_min_; }
    double v_max() const { return v_max_; }
    double delta() const { return delta_; }
    double operator[](std::size_t i) const { return atoms_[i]; }
    std::span<const double> atoms() const { return atoms_; }

private:
    double v_min_;
    double v_max_;
    double delta_;
    std::vector<double> atoms_;
};

/// Row-stochastic [n_actions x n_atoms] matrix.
struct CategoricalDistribution {
    std::size_t n_actions = 0;
    std::size_t n_atoms = 0;
    std::vector<double> probs;

    std::span<const double> row(std::size_t a) const { return {probs.data() + a * n_atoms, n_atoms}; }
};

/// logits[a][i] = V[i] + A[a][i] - mean_a'(A[a'][i]).
std::vector<double> dueling_aggregate(std::span<const double> value, std::span<const double> advantage,
                                      std::size_t n_actions);

/// Row-wise softmax over atoms.
CategoricalDistribution softmax_rows(std::span<const double> logits, std::size_t n_actions, std::size_t n_atoms);

std::vector<double> q_values(const CategoricalDistribution& dist, const AtomSupport& support);

/// First index of the maximum.
std::size_t argmax(std::span<const double> values);

/// Shifts the atoms by reward + discount_n * z, clamps to the support and
/// splits each mass linearly between the two neighbouring atoms.
std::vector<double> categorical_project(std::span<const double> next_row, double reward, double discount_n,
                                        const AtomSupport& support);

struct AgentConfig {
    double gamma = 0.99;
    std::size_t n_step = 3;
    std::size_t target_sync_period = 2000;  // agent (environment) steps
    std::size_t batch_size = 32;
    std::size_t train_every = 4;
    std::size_t warmup_steps = 1000;
    std::size_t n_atoms = 21;
    double v_min = -10.0;
    double v_max = 10.0;
    std::size_t hidden = 128;
    double sigma0 = 0.5;
    nn::AdamConfig adam{};

    static constexpr std::size_t history_len = env::kHistory;

    void validate() const;
};

nn::NetworkSpec agent_network_spec(const AgentConfig& config, std::size_t n_actions = env::kActions);

/// Splits a batched network output [batch, n_atoms + n_actions * n_atoms]
/// (value head then advantage head) into per-sample distributions.
std::vector<CategoricalDistribution> output_distributions(const nn::Tensor& output, std::size_t n_actions,
                                                          std::size_t n_atoms);

/// Double-Q n-step targets: the online network picks a* at s_{t+n}, the
/// target network's distribution for a* is projected. Returns [batch x n_atoms].
std::vector<double> compute_target(std::span<const replay::Transition* const> batch, const nn::Network& online,
                                   const nn::NoiseDraw* online_noise, const nn::Network& target,
                                   const nn::NoiseDraw* target_noise, const AgentConfig& config,
                                   const AtomSupport& support, std::size_t n_actions = env::kActions);

struct CrossEntropy {
    std::vector<double> per_sample;  // unweighted cross-entropy
    double loss = 0.0;               // mean of weight * cross-entropy
    nn::Tensor output_grad;          // d loss / d network output
};

/// Cross-entropy between target rows and the predicted distribution of the
/// chosen action, back-propagated through the dueling aggregation.
CrossEntropy distribution_loss(const nn::Tensor& output, std::span<const std::size_t> actions,
                               std::span<const double> targets, std::span<const double> weights,
                               std::size_t n_actions, std::size_t n_atoms);

enum class Mode { train, eval };

struct TrainResult {
    double loss = 0.0;
    std::vector<double> td_errors;
    std::vector<std::size_t> indices;
    bool synced = false;
};

class Agent {
public:
    /// Fresh agent; network initialized from the seed.
    Agent(AgentConfig config, std::uint64_t seed);
    /// Agent around an existing online network (the target starts as a copy).
    Agent(AgentConfig config, nn::Network online, std::uint64_t seed);

    std::size_t act(const env::Observation& obs, Mode mode);
    /// Eval-mode action values (noise zeroed).
    std::vector<double> q_values(const env::Observation& obs) const;
    CategoricalDistribution distribution(const env::Observation& obs, const nn::NoiseDraw* noise = nullptr) const;

    /// Returns nullopt when the replay cannot fill a batch.
    std::optional<TrainResult> train_step(replay::PrioritizedReplay& replay, double beta,
                                          const nn::FreezeMask* mask = nullptr);
    void sync_target();

    const AgentConfig& config() const { return config_; }
    const AtomSupport& support() const { return support_; }
    const nn::Network& online() const { return online_; }
    const nn::Network& target() const { return target_; }
    nn::Network& mutable_online() { return online_; }
    const nn::Adam& optimizer() const { return adam_; }
    std::size_t steps_since_sync() const { return steps_since_sync_; }
    std::size_t train_steps() const { return train_steps_; }
    std::mt19937_64& rng() { return rng_; }

private:
    AgentConfig config_;
    AtomSupport support_;
    nn::Network online_;
    nn::Network target_;
    nn::Adam adam_;
    std::mt19937_64 rng_;
    std::size_t steps_since_sync_ = 0;
    std::size_t train_steps_ = 0;
};

}  // namespace rtl::agent
