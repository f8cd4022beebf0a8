#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "rtl/envs.hpp"

namespace rtl::replay {

/// Binary sum tree over a power-of-two number of leaves. Node 1 is the root,
/// leaf i lives at node capacity + i.
class SumTree {
public:
    explicit SumTree(std::size_t min_capacity);

    std::size_t capacity() const { return capacity_; }
    void set(std::size_t leaf, double priority);
    double get(std::size_t leaf) const;
    double total() const { return nodes_[1]; }

    /// Leaf whose cumulative interval [prefix, prefix + priority) contains u.
    std::size_t find_prefix(double u) const;

    /// Largest |node - (left + right)| over all internal nodes.
    double max_inconsistency() const;
    double leaf_sum() const;

private:
    std::size_t capacity_;
    std::vector<double> nodes_;
};

struct Transition {
    env::Observation state;
    std::size_t action = 0;
    double ret = 0.0;  // n-step discounted return
    env::Observation next_state;
    bool terminal = false;
    std::size_t n_actual = 1;
};

struct BufferConfig {
    std::size_t capacity = 50'000;
    double alpha = 0.5;
    double beta0 = 0.4;
    double priority_epsilon = 1e-6;
};

/// Linear anneal from beta0 at step 0 to 1 at total_steps.
double beta_at(double beta0, std::size_t step, std::size_t total_steps);

struct SampleBatch {
    std::vector<const Transition*> transitions;
    std::vector<std::size_t> indices;
    std::vector<double> weights;
};

class PrioritizedReplay {
public:
    explicit PrioritizedReplay(BufferConfig config = {});

    /// Stores at the next ring slot. Without an explicit priority the
    /// largest priority seen so far is used.
    void push(Transition t, std::optional<double> priority = std::nullopt);

    /// Stratified proportional sampling with max-normalized importance weights.
    SampleBatch sample(std::size_t batch, double beta, std::mt19937_64& rng) const;
    void update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors);

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return config_.capacity; }
    const BufferConfig& config() const { return config_; }
    double max_priority() const { return max_priority_; }
    const SumTree& tree() const { return tree_; }
    const Transition& at(std::size_t index) const { return storage_.at(index); }
    /// Leaf value for a raw priority: (p + epsilon)^alpha.
    double leaf_priority(double raw) const;

private:
    BufferConfig config_;
    SumTree tree_;
    std::vector<Transition> storage_;
    std::size_t next_ = 0;
    std::size_t size_ = 0;
    double max_priority_ = 1.0;
};

struct StepRecord {
    env::Observation state;
    std::size_t action = 0;
    double reward = 0.0;
    env::Observation next_state;
    bool terminal = false;
};

/// Folds consecutive steps into n-step transitions.
class NStepFolder {
public:
    NStepFolder(std::size_t n, double gamma);

    /// Returns zero or one transition mid-episode; at a terminal step it
    /// flushes every pending start state with a shortened horizon.
    std::vector<Transition> push(const StepRecord& step);
    void clear() { pending_.clear(); }
    std::size_t pending() const { return pending_.size(); }

private:
    struct Pending {
        env::Observation state;
        std::size_t action;
        double reward;
    };
    Transition fold(std::size_t count, const env::Observation& next, bool terminal) const;

    std::size_t n_;
    double gamma_;
    std::deque<Pending> pending_;
};

}  // namespace rtl::replay
