#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gridpipe/hstep.hpp"
#include "gridpipe/qnetwork.hpp"

namespace gridpipe {

struct AgentConfig {
    double gamma = 0.99;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    int epsilon_decay_episodes = 2000;
    int replay_capacity = 100000;
    int batch_size = 32;
    double per_alpha = 0.6;
    double per_beta_start = 0.4;
    double per_beta_end = 1.0;
    int per_beta_anneal_episodes = 2000;
    int target_sync_steps = 1000;
    int train_every_steps = 4;
    double eval_epsilon = 0.05;
    double learning_rate = 0.0005;
    // Whether epsilon-greedy applies at intermediate hierarchy levels too
    // (the final level always explores).
    bool explore_intermediate_levels = true;

    double epsilon_at(int episode) const;
    double beta_at(int episode) const;
};

/// State compressed for replay storage: grid ids exactly, the numeric parts
/// as float32 (training reads them back as doubles deterministically).
struct StoredState {
    std::vector<std::int8_t> gp;
    std::vector<float> rest;  // gin | pm | om | lj | ac

    static StoredState compress(const StateVector& s);
    static StoredState zeros(const QNetworkConfig& cfg);
    StateVector decompress(const QNetworkConfig& cfg) const;
};

/// Final-hierarchy transition; only these enter the replay buffer. Terminal
/// transitions carry an all-zero next state by convention.
struct Transition {
    StoredState state;
    int action = 0;
    double reward = 0.0;
    StoredState next;
    bool done = false;
};

/// Proportional prioritized replay over a sum-tree. New transitions enter at
/// the current maximum priority (1 when empty) and ring-evict when full.
class ReplayBuffer {
public:
    ReplayBuffer(int capacity, double alpha);

    void store(Transition t);
    int size() const { return size_; }
    int capacity() const { return capacity_; }

    struct SampleSet {
        std::vector<int> indices;
        std::vector<double> weights;  // importance weights, max-normalized
    };
    /// Stratified proportional sampling; weights use exponent beta.
    SampleSet sample(int batch, double beta, Rng& rng) const;

    const Transition& at(int index) const { return items_[static_cast<std::size_t>(index)]; }
    void update_priority(int index, double priority);
    double priority_of(int index) const;

private:
    double leaf_value(int index) const;
    void set_leaf(int index, double value);

    int capacity_;
    double alpha_;
    int size_ = 0;
    int write_ = 0;
    double max_priority_ = 1.0;
    std::vector<Transition> items_;
    std::vector<double> tree_;  // binary sum-tree, leaves at [capacity_, 2*capacity_)
};

/// DQN learner over final-hierarchy transitions: epsilon-greedy n-way
/// selection, prioritized replay, clipped-quadratic TD loss with a
/// periodically synced target network.
class Agent {
public:
    Agent(QNetworkConfig net_cfg, AgentConfig cfg, std::uint64_t seed);

    const AgentConfig& config() const { return cfg_; }
    QNetwork& network() { return net_; }
    const QNetwork& network() const { return net_; }
    const QNetwork& target_network() const { return target_; }
    /// Copies the online parameters into the target network (also runs on
    /// the train_step schedule).
    void sync_target() { target_ = net_; }
    long learner_steps() const { return learner_steps_; }

    /// Epsilon-greedy over the action slots; greedy ranking uses the
    /// advantage head (equal to ranking by Q within one state).
    int select_action(const StateVector& state, double epsilon, Rng& rng) const;

    void store(Transition t) { buffer_.store(std::move(t)); }
    ReplayBuffer& buffer() { return buffer_; }

    struct TrainStats {
        bool applied = false;
        double loss = 0.0;
    };
    /// One prioritized batch: y = r (+ gamma max_a' Q_target when not done),
    /// importance-weighted Huber loss, one optimizer step, priority refresh,
    /// target sync on schedule. No-op when the buffer is smaller than batch.
    TrainStats train_step(Rng& rng, double beta);

private:
    AgentConfig cfg_;
    QNetwork net_;
    QNetwork target_;
    ReplayBuffer buffer_;
    AdamState adam_;
    long learner_steps_ = 0;
};

int flat_action_count(const EnvironmentConfig& cfg);

/// Network dimensions implied by an environment: an n-way head over cluster
/// slots, or a flat head over the whole enumerated action table.
QNetworkConfig network_config_for(const EnvironmentConfig& env);

struct EpisodeLog {
    int episode = 0;
    std::string dataset;
    double total_reward = 0.0;
    double epsilon = 0.0;
    std::optional<double> loss_mean;  // empty when no train step ran
    bool pipeline_valid = false;
    double kscore = 0.0;
};

struct TrainResult {
    std::vector<EpisodeLog> episodes;
    std::string metrics_csv() const;
    double mean_total_reward() const;
};

struct TrainOptions {
    int episodes = 2000;
    std::uint64_t seed = 0;
    std::function<void(const EpisodeLog&)> on_episode;  // progress hook
};

/// Cross-dataset training: per episode, pick a dataset uniformly, run one
/// full grid sweep (through the plugin, or over the flat table when the
/// environment disables it), store final-hierarchy transitions with lazily
/// completed next-states, and train on schedule. Jobs that fail the reset
/// preconditions are skipped with a warning.
TrainResult train_corpus(Agent& agent, Environment& env, const std::vector<LearningJob>& jobs,
                         const TrainOptions& opts);

}  // namespace gridpipe
