#include "rtl/replay.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "rtl/error.hpp"

namespace rtl::replay {

SumTree::SumTree(std::size_t min_capacity) : capacity_(std::bit_ceil(std::max<std::size_t>(min_capacity, 1))) {
    nodes_.assign(2 * capacity_, 0.0);
}

void SumTree::set(std::size_t leaf, double priority) {
    if (leaf >= capacity_) throw Error("sum tree leaf " + std::to_string(leaf) + " out of range");
    if (!(priority >= 0.0) || !std::isfinite(priority)) throw Error("sum tree priority must be finite and >= 0");
    std::size_t i = capacity_ + leaf;
    nodes_[i] = priority;
    for (i /= 2; i >= 1; i /= 2) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

double SumTree::get(std::size_t leaf) const {
    if (leaf >= capacity_) throw Error("sum tree leaf " + std::to_string(leaf) + " out of range");
    return nodes_[capacity_ + leaf];
}

std::size_t SumTree::find_prefix(double u) const {
    std::size_t i = 1;
    while (i < capacity_) {
        const double left = nodes_[2 * i];
        if (u < left || nodes_[2 * i + 1] <= 0.0) {
            i = 2 * i;
        } else {
            u -= left;
            i = 2 * i + 1;
        }
    }
    return i - capacity_;
}

double SumTree::max_inconsistency() const {
    double worst = 0.0;
    for (std::size_t i = 1; i < capacity_; ++i)
        worst = std::max(worst, std::abs(nodes_[i] - (nodes_[2 * i] + nodes_[2 * i + 1])));
    return worst;
}

double SumTree::leaf_sum() const {
    double s = 0.0;
    for (std::size_t i = 0; i < capacity_; ++i) s += nodes_[capacity_ + i];
    return s;
}

double beta_at(double beta0, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) return 1.0;
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return beta0 + (1.0 - beta0) * frac;
}

PrioritizedReplay::PrioritizedReplay(BufferConfig config) : config_(config), tree_(config.capacity) {
    if (config_.capacity == 0) throw ConfigError("replay capacity must be >= 1");
    if (config_.alpha < 0.0 || config_.alpha > 1.0) throw ConfigError("replay alpha must lie in [0, 1]");
    if (config_.beta0 <= 0.0 || config_.beta0 > 1.0) throw ConfigError("replay beta0 must lie in (0, 1]");
    storage_.reserve(std::min<std::size_t>(config_.capacity, 4096));
}

double PrioritizedReplay::leaf_priority(double raw) const {
    return std::pow(std::abs(raw) + config_.priority_epsilon, config_.alpha);
}

void PrioritizedReplay::push(Transition t, std::optional<double> priority) {
    const double raw = priority.value_or(max_priority_);
    max_priority_ = std::max(max_priority_, std::abs(raw));
    if (storage_.size() < config_.capacity)
        storage_.push_back(std::move(t));
    else
        storage_[next_] = std::move(t);
    tree_.set(next_, leaf_priority(raw));
    next_ = (next_ + 1) % config_.capacity;
    size_ = std::min(size_ + 1, config_.capacity);
}

SampleBatch PrioritizedReplay::sample(std::size_t batch, double beta, std::mt19937_64& rng) const {
    if (batch == 0 || size_ < batch)
        throw StateError("replay holds " + std::to_string(size_) + " transitions, cannot sample " +
                         std::to_string(batch));
    const double total = tree_.total();
    const double segment = total / static_cast<double>(batch);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    SampleBatch out;
    out.transitions.reserve(batch);
    out.indices.reserve(batch);
    out.weights.reserve(batch);
    double max_w = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double u = (static_cast<double>(i) + uni(rng)) * segment;
        std::size_t idx = tree_.find_prefix(std::min(u, std::nextafter(total, 0.0)));
        idx = std::min(idx, size_ - 1);
        const double p = tree_.get(idx) / total;
        const double w = std::pow(static_cast<double>(size_) * p, -beta);
        max_w = std::max(max_w, w);
        out.transitions.push_back(&storage_[idx]);
        out.indices.push_back(idx);
        out.weights.push_back(w);
    }
    for (auto& w : out.weights) w /= max_w;
    return out;
}

void PrioritizedReplay::update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors) {
    if (indices.size() != td_errors.size()) throw Error("update_priorities: indices and errors differ in length");
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size_)
            throw Error("update_priorities: index " + std::to_string(indices[i]) + " out of range (size " +
                        std::to_string(size_) + ")");
        if (!std::isfinite(td_errors[i])) throw Error("update_priorities: non-finite error");
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
        max_priority_ = std::max(max_priority_, std::abs(td_errors[i]));
        tree_.set(indices[i], leaf_priority(td_errors[i]));
    }
}

NStepFolder::NStepFolder(std::size_t n, double gamma) : n_(n), gamma_(gamma) {
    if (n_ == 0) throw ConfigError("n_step must be >= 1");
    if (gamma_ < 0.0 || gamma_ > 1.0) throw ConfigError("gamma must lie in [0, 1]");
}

Transition NStepFolder::fold(std::size_t count, const env::Observation& next, bool terminal) const {
    Transition t;
    t.state = pending_.front().state;
    t.action = pending_.front().action;
    double g = 0.0;
    double discount = 1.0;
    for (std::size_t i = 0; i < count; ++i) {
        g += discount * pending_[i].reward;
        discount *= gamma_;
    }
    t.ret = g;
    t.next_state = next;
    t.terminal = terminal;
    t.n_actual = count;
    return t;
}

std::vector<Transition> NStepFolder::push(const StepRecord& step) {
    pending_.push_back({step.state, step.action, step.reward});
    std::vector<Transition> out;
    if (step.terminal) {
        while (!pending_.empty()) {
            out.push_back(fold(pending_.size(), step.next_state, true));
            pending_.pop_front();
        }
    } else if (pending_.size() == n_) {
        out.push_back(fold(n_, step.next_state, false));
        pending_.pop_front();
    }
    return out;
}

}  // namespace rtl::replay
