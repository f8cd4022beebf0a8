#include "rtl/agent.hpp"

#include <algorithm>
#include <cmath>

#include "rtl/error.hpp"
#include "rtl/hash.hpp"

namespace rtl::agent {

AtomSupport::AtomSupport(std::size_t n_atoms, double v_min, double v_max) : v_min_(v_min), v_max_(v_max) {
    if (n_atoms < 2) throw ConfigError("atom support needs at least 2 atoms");
    if (!(v_min < v_max)) throw ConfigError("atom support needs v_min < v_max");
    delta_ = (v_max - v_min) / static_cast<double>(n_atoms - 1);
    atoms_.resize(n_atoms);
    for (std::size_t i = 0; i < n_atoms; ++i) atoms_[i] = v_min + static_cast<double>(i) * delta_;
    atoms_.back() = v_max;
}

std::vector<double> dueling_aggregate(std::span<const double> value, std::span<const double> advantage,
                                      std::size_t n_actions) {
    const std::size_t n_atoms = value.size();
    if (n_actions == 0 || advantage.size() != n_actions * n_atoms)
        throw ShapeError("dueling_aggregate: advantage size " + std::to_string(advantage.size()) +
                         " != n_actions * n_atoms");
    std::vector<double> logits(n_actions * n_atoms);
    for (std::size_t i = 0; i < n_atoms; ++i) {
        double mean = 0.0;
        for (std::size_t a = 0; a < n_actions; ++a) mean += advantage[a * n_atoms + i];
        mean /= static_cast<double>(n_actions);
        for (std::size_t a = 0; a < n_actions; ++a)
            logits[a * n_atoms + i] = value[i] + advantage[a * n_atoms + i] - mean;
    }
    return logits;
}

CategoricalDistribution softmax_rows(std::span<const double> logits, std::size_t n_actions, std::size_t n_atoms) {
    if (logits.size() != n_actions * n_atoms) throw ShapeError("softmax_rows: logits size mismatch");
    CategoricalDistribution d{n_actions, n_atoms, std::vector<double>(logits.size())};
    for (std::size_t a = 0; a < n_actions; ++a) {
        const double* in = logits.data() + a * n_atoms;
        double* out = d.probs.data() + a * n_atoms;
        const double mx = *std::max_element(in, in + n_atoms);
        double sum = 0.0;
        for (std::size_t i = 0; i < n_atoms; ++i) sum += out[i] = std::exp(in[i] - mx);
        for (std::size_t i = 0; i < n_atoms; ++i) out[i] /= sum;
    }
    return d;
}

std::vector<double> q_values(const CategoricalDistribution& dist, const AtomSupport& support) {
    if (dist.n_atoms != support.size()) throw ShapeError("q_values: distribution and support sizes differ");
    std::vector<double> q(dist.n_actions, 0.0);
    for (std::size_t a = 0; a < dist.n_actions; ++a) {
        const auto row = dist.row(a);
        for (std::size_t i = 0; i < dist.n_atoms; ++i) q[a] += row[i] * support[i];
    }
    return q;
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ShapeError("argmax of empty vector");
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> categorical_project(std::span<const double> next_row, double reward, double discount_n,
                                        const AtomSupport& support) {
    const std::size_t n = support.size();
    if (next_row.size() != n) throw ShapeError("categorical_project: row size does not match support");
    std::vector<double> out(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double tz = std::clamp(reward + discount_n * support[j], support.v_min(), support.v_max());
        const double b = (tz - support.v_min()) / support.delta();
        const double lo = std::floor(b);
        const double hi = std::ceil(b);
        const auto l = static_cast<std::size_t>(std::clamp(lo, 0.0, static_cast<double>(n - 1)));
        const auto u = static_cast<std::size_t>(std::clamp(hi, 0.0, static_cast<double>(n - 1)));
        if (l == u) {
            out[l] += next_row[j];
        } else {
            out[l] += next_row[j] * (hi - b);
            out[u] += next_row[j] * (b - lo);
        }
    }
    return out;
}

void AgentConfig::validate() const {
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
    if (n_step == 0 || target_sync_period == 0 || batch_size == 0 || train_every == 0)
        throw ConfigError("agent counts must be >= 1");
    if (n_atoms < 2 || !(v_min < v_max)) throw ConfigError("invalid atom support");
}

nn::NetworkSpec agent_network_spec(const AgentConfig& config, std::size_t n_actions) {
    return nn::rainbow_spec(n_actions, config.n_atoms, AgentConfig::history_len, env::kHeight, env::kWidth,
                            config.hidden, config.sigma0);
}

std::vector<CategoricalDistribution> output_distributions(const nn::Tensor& output, std::size_t n_actions,
                                                          std::size_t n_atoms) {
    const std::size_t width = n_atoms + n_actions * n_atoms;
    if (output.rank() != 2 || output.dim(1) != width)
        throw ShapeError("network output " + nn::shape_string(output.shape()) + " is not [batch x " +
                         std::to_string(width) + "]");
    std::vector<CategoricalDistribution> out;
    out.reserve(output.dim(0));
    for (std::size_t b = 0; b < output.dim(0); ++b) {
        const double* row = output.data().data() + b * width;
        const auto logits = dueling_aggregate({row, n_atoms}, {row + n_atoms, n_actions * n_atoms}, n_actions);
        out.push_back(softmax_rows(logits, n_actions, n_atoms));
    }
    return out;
}

namespace {

nn::Tensor states_tensor(std::span<const replay::Transition* const> batch, bool next) {
    std::vector<const env::Observation*> obs;
    obs.reserve(batch.size());
    for (const auto* t : batch) obs.push_back(next ? &t->next_state : &t->state);
    return env::batch_tensor(obs);
}

}  // namespace

std::vector<double> compute_target(std::span<const replay::Transition* const> batch, const nn::Network& online,
                                   const nn::NoiseDraw* online_noise, const nn::Network& target,
                                   const nn::NoiseDraw* target_noise, const AgentConfig& config,
                                   const AtomSupport& support, std::size_t n_actions) {
    const std::size_t n_atoms = support.size();
    const nn::Tensor next = states_tensor(batch, true);
    const auto select = output_distributions(online.forward(next, online_noise).output, n_actions, n_atoms);
    const auto evaluate = output_distributions(target.forward(next, target_noise).output, n_actions, n_atoms);
    std::vector<double> out(batch.size() * n_atoms);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto* t = batch[b];
        const std::size_t best = argmax(q_values(select[b], support));
        const double discount = t->terminal ? 0.0 : std::pow(config.gamma, static_cast<double>(t->n_actual));
        const auto row = categorical_project(evaluate[b].row(best), t->ret, discount, support);
        std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(b * n_atoms));
    }
    return out;
}

CrossEntropy distribution_loss(const nn::Tensor& output, std::span<const std::size_t> actions,
                               std::span<const double> targets, std::span<const double> weights,
                               std::size_t n_actions, std::size_t n_atoms) {
    const std::size_t batch = output.dim(0);
    const std::size_t width = n_atoms + n_actions * n_atoms;
    if (output.rank() != 2 || output.dim(1) != width || actions.size() != batch || weights.size() != batch ||
        targets.size() != batch * n_atoms)
        throw ShapeError("distribution_loss: inconsistent batch shapes");
    CrossEntropy ce;
    ce.per_sample.resize(batch);
    ce.output_grad = nn::Tensor({batch, width});
    std::vector<double> dlogit(n_atoms);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t a = actions[b];
        if (a >= n_actions) throw ShapeError("distribution_loss: action out of range");
        const double* row = output.data().data() + b * width;
        const auto logits = dueling_aggregate({row, n_atoms}, {row + n_atoms, n_actions * n_atoms}, n_actions);
        const double* la = logits.data() + a * n_atoms;
        const double mx = *std::max_element(la, la + n_atoms);
        double sum = 0.0;
        for (std::size_t i = 0; i < n_atoms; ++i) sum += std::exp(la[i] - mx);
        const double log_z = mx + std::log(sum);
        const double* tgt = targets.data() + b * n_atoms;
        double loss = 0.0;
        double tgt_mass = 0.0;
        for (std::size_t i = 0; i < n_atoms; ++i) {
            loss -= tgt[i] * (la[i] - log_z);
            tgt_mass += tgt[i];
        }
        ce.per_sample[b] = loss;
        ce.loss += weights[b] * loss;
        const double scale = weights[b] / static_cast<double>(batch);
        for (std::size_t i = 0; i < n_atoms; ++i)
            dlogit[i] = scale * (tgt_mass * std::exp(la[i] - log_z) - tgt[i]);
        // Only row a of the logits carries gradient.
        double* g = ce.output_grad.data().data() + b * width;
        const double inv_actions = 1.0 / static_cast<double>(n_actions);
        for (std::size_t i = 0; i < n_atoms; ++i) {
            g[i] = dlogit[i];
            for (std::size_t k = 0; k < n_actions; ++k)
                g[n_atoms + k * n_atoms + i] = (k == a ? dlogit[i] : 0.0) - dlogit[i] * inv_actions;
        }
    }
    ce.loss /= static_cast<double>(batch);
    return ce;
}

Agent::Agent(AgentConfig config, std::uint64_t seed)
    : Agent(config,
            [&] {
                nn::Network net(agent_network_spec(config));
                net.initialize(mix64(seed));
                return net;
            }(),
            seed) {}

Agent::Agent(AgentConfig config, nn::Network online, std::uint64_t seed)
    : config_(config),
      support_(config.n_atoms, config.v_min, config.v_max),
      online_(std::move(online)),
      target_(online_),
      adam_(online_, config.adam),
      rng_(mix64(seed ^ 0xa5a5a5a5ULL)) {
    config_.validate();
    if (online_.architecture_hash() != nn::Network(agent_network_spec(config_)).architecture_hash())
        throw ArchitectureMismatch("agent network does not match the configured architecture");
}

CategoricalDistribution Agent::distribution(const env::Observation& obs, const nn::NoiseDraw* noise) const {
    const env::Observation* p = &obs;
    const auto out = online_.forward(env::batch_tensor({p}), noise).output;
    return output_distributions(out, env::kActions, config_.n_atoms).front();
}

std::vector<double> Agent::q_values(const env::Observation& obs) const {
    return agent::q_values(distribution(obs), support_);
}

std::size_t Agent::act(const env::Observation& obs, Mode mode) {
    if (mode == Mode::eval) return argmax(q_values(obs));
    const nn::NoiseDraw noise = online_.sample_noise(rng_);
    return argmax(agent::q_values(distribution(obs, &noise), support_));
}

std::optional<TrainResult> Agent::train_step(replay::PrioritizedReplay& replay, double beta,
                                             const nn::FreezeMask* mask) {
    if (replay.size() < config_.batch_size) return std::nullopt;
    const auto sample = replay.sample(config_.batch_size, beta, rng_);
    const nn::NoiseDraw online_noise = online_.sample_noise(rng_);
    const nn::NoiseDraw target_noise = target_.sample_noise(rng_);
    const auto targets =
        compute_target(sample.transitions, online_, &online_noise, target_, &target_noise, config_, support_);

    const nn::Tensor states = states_tensor(sample.transitions, false);
    std::vector<std::size_t> actions;
    actions.reserve(sample.transitions.size());
    for (const auto* t : sample.transitions) actions.push_back(t->action);

    auto fwd = online_.forward(states, &online_noise);
    auto ce = distribution_loss(fwd.output, actions, targets, sample.weights, env::kActions, config_.n_atoms);
    const auto grads = online_.backward(fwd.cache, ce.output_grad);
    adam_.apply(online_, grads, mask);
    replay.update_priorities(sample.indices, ce.per_sample);
    ++train_steps_;

    TrainResult result;
    result.loss = ce.loss;
    result.td_errors = std::move(ce.per_sample);
    result.indices = sample.indices;
    steps_since_sync_ += config_.train_every;
    if (steps_since_sync_ >= config_.target_sync_period) {
        sync_target();
        result.synced = true;
    }
    return result;
}

void Agent::sync_target() {
    target_ = online_;
    steps_since_sync_ = 0;
}

}  // namespace rtl::agent
