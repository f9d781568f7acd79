#include "gridpipe/agent.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace gridpipe {

double AgentConfig::epsilon_at(int episode) const {
    const double t = epsilon_decay_episodes > 0
                         ? std::min(1.0, static_cast<double>(episode) / epsilon_decay_episodes)
                         : 1.0;
    return epsilon_start + (epsilon_end - epsilon_start) * t;
}

double AgentConfig::beta_at(int episode) const {
    const double t = per_beta_anneal_episodes > 0
                         ? std::min(1.0, static_cast<double>(episode) / per_beta_anneal_episodes)
                         : 1.0;
    return per_beta_start + (per_beta_end - per_beta_start) * t;
}

// ---------------------------------------------------------------------------
// Stored states
// ---------------------------------------------------------------------------

StoredState StoredState::compress(const StateVector& s) {
    StoredState out;
    out.gp.reserve(s.grid_primitives.size());
    for (int id : s.grid_primitives) out.gp.push_back(static_cast<std::int8_t>(id));
    out.rest.reserve(s.grid_inputs.size() + s.pipeline_meta.size() + s.input_meta.size() +
                     s.job_vector.size() + s.action_vectors.size());
    const auto push = [&out](const std::vector<double>& v) {
        for (double x : v) out.rest.push_back(static_cast<float>(x));
    };
    push(s.grid_inputs);
    push(s.pipeline_meta);
    push(s.input_meta);
    push(s.job_vector);
    push(s.action_vectors);
    return out;
}

StoredState StoredState::zeros(const QNetworkConfig& cfg) {
    StoredState out;
    out.gp.assign(static_cast<std::size_t>(cfg.grid_cells), 0);
    out.rest.assign(static_cast<std::size_t>(cfg.grid_cells * cfg.max_inputs + cfg.pm_dim +
                                             cfg.om_dim + cfg.lj_dim +
                                             cfg.n_actions * cfg.action_feature_dim),
                    0.0F);
    return out;
}

StateVector StoredState::decompress(const QNetworkConfig& cfg) const {
    StateVector s;
    s.grid_primitives.reserve(gp.size());
    for (std::int8_t id : gp) s.grid_primitives.push_back(id);
    std::size_t pos = 0;
    const auto take = [this, &pos](std::vector<double>& v, int count) {
        v.resize(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = rest[pos++];
    };
    take(s.grid_inputs, cfg.grid_cells * cfg.max_inputs);
    take(s.pipeline_meta, cfg.pm_dim);
    take(s.input_meta, cfg.om_dim);
    take(s.job_vector, cfg.lj_dim);
    take(s.action_vectors, cfg.n_actions * cfg.action_feature_dim);
    s.action_valid.assign(static_cast<std::size_t>(cfg.action_feature_dim > 0 ? cfg.n_actions : 0), 0);
    return s;
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(int capacity, double alpha) : capacity_(capacity), alpha_(alpha) {
    if (capacity < 1) throw UsageError("replay: capacity must be >= 1");
    items_.resize(static_cast<std::size_t>(capacity));
    tree_.assign(static_cast<std::size_t>(2 * capacity), 0.0);
}

double ReplayBuffer::leaf_value(int index) const {
    return tree_[static_cast<std::size_t>(capacity_ + index)];
}

void ReplayBuffer::set_leaf(int index, double value) {
    int node = capacity_ + index;
    tree_[static_cast<std::size_t>(node)] = value;
    for (node /= 2; node >= 1; node /= 2) {
        tree_[static_cast<std::size_t>(node)] =
            tree_[static_cast<std::size_t>(2 * node)] + tree_[static_cast<std::size_t>(2 * node + 1)];
    }
}

void ReplayBuffer::store(Transition t) {
    items_[static_cast<std::size_t>(write_)] = std::move(t);
    set_leaf(write_, std::pow(max_priority_, alpha_));
    write_ = (write_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

void ReplayBuffer::update_priority(int index, double priority) {
    if (!(priority > 0.0)) priority = 1e-12;
    max_priority_ = std::max(max_priority_, priority);
    set_leaf(index, std::pow(priority, alpha_));
}

double ReplayBuffer::priority_of(int index) const {
    return std::pow(leaf_value(index), 1.0 / alpha_);
}

ReplayBuffer::SampleSet ReplayBuffer::sample(int batch, double beta, Rng& rng) const {
    if (size_ < 1) throw std::logic_error("replay: sample from empty buffer");
    SampleSet out;
    out.indices.reserve(static_cast<std::size_t>(batch));
    out.weights.reserve(static_cast<std::size_t>(batch));
    const double total = tree_[1];
    for (int j = 0; j < batch; ++j) {
        // Stratified draw within the j-th segment of the total mass.
        const double u = (static_cast<double>(j) + rng.uniform()) / batch * total;
        int node = 1;
        double mass = u;
        while (node < capacity_) {
            const double left = tree_[static_cast<std::size_t>(2 * node)];
            if (mass <= left || tree_[static_cast<std::size_t>(2 * node + 1)] <= 0.0) {
                node = 2 * node;
            } else {
                mass -= left;
                node = 2 * node + 1;
            }
        }
        int index = node - capacity_;
        if (index >= size_) index = size_ - 1;  // numeric edge of the last segment
        out.indices.push_back(index);
    }
    double max_w = 0.0;
    for (int idx : out.indices) {
        const double p = leaf_value(idx) / total;
        const double w = std::pow(static_cast<double>(size_) * p, -beta);
        out.weights.push_back(w);
        max_w = std::max(max_w, w);
    }
    if (max_w > 0.0) {
        for (double& w : out.weights) w /= max_w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

Agent::Agent(QNetworkConfig net_cfg, AgentConfig cfg, std::uint64_t seed)
    : cfg_(cfg),
      net_(net_cfg, seed),
      target_(net_),
      buffer_(cfg.replay_capacity, cfg.per_alpha),
      adam_(net_, cfg.learning_rate) {}

int Agent::select_action(const StateVector& state, double epsilon, Rng& rng) const {
    const int n = net_.config().n_actions;
    if (epsilon > 0.0 && rng.uniform() < epsilon) {
        return static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n)));
    }
    const Eigen::VectorXd a = net_.advantage_one(state);
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (a(i) > a(best)) best = i;  // ties break to the lowest index
    }
    return best;
}

namespace {

double huber(double x) {
    const double ax = std::abs(x);
    return ax <= 1.0 ? 0.5 * x * x : ax - 0.5;
}

}  // namespace

Agent::TrainStats Agent::train_step(Rng& rng, double beta) {
    TrainStats stats;
    if (buffer_.size() < cfg_.batch_size) return stats;

    const ReplayBuffer::SampleSet sample = buffer_.sample(cfg_.batch_size, beta, rng);
    const int B = cfg_.batch_size;
    const QNetworkConfig& ncfg = net_.config();

    std::vector<StateVector> states, nexts;
    states.reserve(static_cast<std::size_t>(B));
    nexts.reserve(static_cast<std::size_t>(B));
    for (int idx : sample.indices) {
        const Transition& t = buffer_.at(idx);
        states.push_back(t.state.decompress(ncfg));
        nexts.push_back(t.next.decompress(ncfg));
    }
    std::vector<const StateVector*> sp, np;
    for (const auto& s : states) sp.push_back(&s);
    for (const auto& s : nexts) np.push_back(&s);

    const Batch batch = Batch::pack(ncfg, sp);
    const Batch next_batch = Batch::pack(ncfg, np);

    ForwardCache cache;
    const QNetworkOutput online = net_.forward(batch, cache);
    const QNetworkOutput bootstrap = target_.forward(next_batch);

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(B, ncfg.n_actions);
    double loss = 0.0;
    std::vector<double> td_abs(static_cast<std::size_t>(B), 0.0);
    for (int i = 0; i < B; ++i) {
        const Transition& t = buffer_.at(sample.indices[static_cast<std::size_t>(i)]);
        double y = t.reward;
        if (!t.done) y += cfg_.gamma * bootstrap.q.row(i).maxCoeff();
        const double delta = y - online.q(i, t.action);
        td_abs[static_cast<std::size_t>(i)] = std::abs(delta);
        const double w = sample.weights[static_cast<std::size_t>(i)];
        loss += w * huber(delta);
        // d(huber)/dQ = -clip(delta, -1, 1); mean loss over the batch.
        dq(i, t.action) = -w * std::clamp(delta, -1.0, 1.0) / B;
    }
    loss /= B;
    if (!std::isfinite(loss)) {
        std::cerr << "[gridpipe] train_step: non-finite loss, update skipped\n";
        return stats;
    }

    const Gradients grads = net_.backward(batch, cache, dq);
    if (!adam_.apply(net_, grads)) {
        std::cerr << "[gridpipe] train_step: non-finite gradient, update skipped\n";
        return stats;
    }
    for (int i = 0; i < B; ++i) {
        buffer_.update_priority(sample.indices[static_cast<std::size_t>(i)],
                                td_abs[static_cast<std::size_t>(i)] + 1e-6);
    }
    ++learner_steps_;
    if (cfg_.target_sync_steps > 0 && learner_steps_ % cfg_.target_sync_steps == 0) {
        target_ = net_;
    }
    stats.applied = true;
    stats.loss = loss;
    return stats;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

int flat_action_count(const EnvironmentConfig& cfg) {
    const int cells = cfg.grid_cells();
    long patterns = 1;  // empty extras
    long level = 1;
    // sum_{j<=N_in-1} C(cells, j)
    for (int j = 1; j <= cfg.max_inputs - 1; ++j) {
        level = level * (cells - j + 1) / j;
        patterns += level;
    }
    return static_cast<int>(1 + patterns * static_cast<long>(catalog().size()));
}

QNetworkConfig network_config_for(const EnvironmentConfig& env) {
    const int n = env.flat_mode ? flat_action_count(env) : env.cluster_size;
    return QNetworkConfig::for_environment(env, static_cast<int>(catalog().size()), n);
}

std::string TrainResult::metrics_csv() const {
    std::ostringstream out;
    out << "episode,dataset,total_reward,epsilon,loss_mean\n";
    for (const auto& e : episodes) {
        out << e.episode << ',' << e.dataset << ',' << format_double(e.total_reward) << ','
            << format_double(e.epsilon) << ','
            << (e.loss_mean ? format_double(*e.loss_mean) : "nan") << '\n';
    }
    return out.str();
}

double TrainResult::mean_total_reward() const {
    if (episodes.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : episodes) s += e.total_reward;
    return s / static_cast<double>(episodes.size());
}

TrainResult train_corpus(Agent& agent, Environment& env, const std::vector<LearningJob>& jobs,
                         const TrainOptions& opts) {
    if (jobs.empty()) throw UsageError("train: no datasets");
    const EnvironmentConfig& ecfg = env.config();
    const AgentConfig& acfg = agent.config();
    const QNetworkConfig& ncfg = agent.network().config();

    // Validate jobs once; unusable datasets are skipped with a warning.
    std::vector<const LearningJob*> usable;
    for (const auto& job : jobs) {
        try {
            Environment probe(ecfg, zero_embedder());
            probe.reset(job, 0);
            usable.push_back(&job);
        } catch (const DataError& e) {
            std::cerr << "[gridpipe] skipping dataset '" << job.name << "': " << e.what() << "\n";
        }
    }
    if (usable.empty()) throw DataError("train: no dataset satisfies the reset preconditions");

    std::vector<FlatAction> flat_table;
    if (ecfg.flat_mode) {
        flat_table = build_flat_action_table(ecfg);
        if (static_cast<int>(flat_table.size()) != ncfg.n_actions) {
            throw std::logic_error("train: flat action table does not match the network head");
        }
    }

    TrainResult result;
    Rng master(opts.seed);
    long env_steps = 0;

    for (int episode = 0; episode < opts.episodes; ++episode) {
        Rng ep_rng = master.fork(static_cast<std::uint64_t>(episode));
        const LearningJob& job = *usable[ep_rng.bounded(usable.size())];
        env.reset(job, hash_combine(opts.seed, fnv1a64("episode") ^ static_cast<std::uint64_t>(episode)));

        const double epsilon = acfg.epsilon_at(episode);
        const double beta = acfg.beta_at(episode);

        EpisodeLog log;
        log.episode = episode;
        log.dataset = job.name;
        log.epsilon = epsilon;
        double loss_sum = 0.0;
        int loss_count = 0;

        std::optional<Transition> pending;
        const auto complete_pending = [&](const StateVector* next_final_state) {
            if (!pending) return;
            pending->next = next_final_state ? StoredState::compress(*next_final_state)
                                             : StoredState::zeros(ncfg);
            agent.store(std::move(*pending));
            pending.reset();
        };

        while (!env.done()) {
            StateVector final_state;
            int action_index = 0;
            StepOutcome outcome;
            if (!ecfg.flat_mode) {
                const Selector select = [&](const StateVector& s,
                                            std::span<const ActionCandidate* const>,
                                            bool final_level) {
                    const double eps =
                        (final_level || acfg.explore_intermediate_levels) ? epsilon : 0.0;
                    return agent.select_action(s, eps, ep_rng);
                };
                HStepResult res = hierarchical_step(env, select);
                final_state = std::move(res.final_state);
                action_index = res.action_index;
                outcome = res.outcome;
            } else {
                final_state = env.encode_base();
                const std::vector<ActionCandidate> open = env.open_list();
                action_index = agent.select_action(final_state, epsilon, ep_rng);
                const auto resolved =
                    env.resolve_flat(flat_table[static_cast<std::size_t>(action_index)], open);
                outcome = env.apply_action(resolved ? *resolved : env.padding_action());
            }

            complete_pending(&final_state);
            pending = Transition{StoredState::compress(final_state), action_index, outcome.reward,
                                 StoredState{}, outcome.done};
            log.total_reward += outcome.reward;
            if (outcome.done) {
                log.pipeline_valid = outcome.pipeline_valid;
                log.kscore = outcome.kscore;
            }

            ++env_steps;
            if (env_steps % acfg.train_every_steps == 0) {
                const Agent::TrainStats stats = agent.train_step(ep_rng, beta);
                if (stats.applied) {
                    loss_sum += stats.loss;
                    ++loss_count;
                }
            }
        }
        complete_pending(nullptr);  // terminal: zero next state

        if (loss_count > 0) log.loss_mean = loss_sum / loss_count;
        if (opts.on_episode) opts.on_episode(log);
        result.episodes.push_back(std::move(log));
    }
    return result;
}

}  // namespace gridpipe
