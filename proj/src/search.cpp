#include "gridpipe/search.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <unordered_set>

namespace gridpipe {

std::vector<ScoredPipeline> search(const LearningJob& job, const QNetwork& net,
                                   const EnvironmentConfig& env_cfg, const SearchConfig& cfg) {
    if (cfg.k < 1) throw UsageError("search: k must be >= 1");
    if (cfg.resolved_episodes() < cfg.k) throw UsageError("search: episodes must be >= k");

    Environment env(env_cfg, net.embedder());
    std::vector<FlatAction> flat_table;
    if (env_cfg.flat_mode) flat_table = build_flat_action_table(env_cfg);

    std::vector<ScoredPipeline> found;
    std::unordered_set<std::uint64_t> seen;
    Rng master(hash_combine(cfg.seed, fnv1a64("search")));

    const int episodes = cfg.resolved_episodes();
    for (int episode = 0; episode < episodes; ++episode) {
        Rng ep_rng = master.fork(static_cast<std::uint64_t>(episode));
        env.reset(job, hash_combine(cfg.seed, fnv1a64("search_episode") ^
                                                  static_cast<std::uint64_t>(episode)));
        StateVector last_state;
        int last_action = 0;
        StepOutcome outcome;
        while (!env.done()) {
            if (!env_cfg.flat_mode) {
                const Selector select = [&](const StateVector& s,
                                            std::span<const ActionCandidate* const>, bool) {
                    const int n = net.config().n_actions;
                    if (ep_rng.uniform() < cfg.eval_epsilon) {
                        return static_cast<int>(ep_rng.bounded(static_cast<std::uint64_t>(n)));
                    }
                    const Eigen::VectorXd a = net.advantage_one(s);
                    int best = 0;
                    for (int i = 1; i < n; ++i) {
                        if (a(i) > a(best)) best = i;
                    }
                    return best;
                };
                HStepResult res = hierarchical_step(env, select);
                last_state = std::move(res.final_state);
                last_action = res.action_index;
                outcome = res.outcome;
            } else {
                last_state = env.encode_base();
                const auto open = env.open_list();
                const int n = net.config().n_actions;
                if (ep_rng.uniform() < cfg.eval_epsilon) {
                    last_action = static_cast<int>(ep_rng.bounded(static_cast<std::uint64_t>(n)));
                } else {
                    const Eigen::VectorXd a = net.advantage_one(last_state);
                    last_action = 0;
                    for (int i = 1; i < n; ++i) {
                        if (a(i) > a(last_action)) last_action = i;
                    }
                }
                const auto resolved =
                    env.resolve_flat(flat_table[static_cast<std::size_t>(last_action)], open);
                outcome = env.apply_action(resolved ? *resolved : env.padding_action());
            }
        }
        if (!outcome.pipeline_valid) continue;

        PipelineDag dag = env.current_dag();
        const std::uint64_t h = pipeline_structural_hash(dag);
        if (!seen.insert(h).second) continue;

        ScoredPipeline sp;
        sp.kscore = outcome.kscore;
        sp.q_final = net.forward_one(last_state).q(0, last_action);
        sp.structure_hash = h;
        sp.discovered_episode = episode;
        sp.pipeline_json = pipeline_to_json(dag);
        sp.dag = std::move(dag);
        found.push_back(std::move(sp));
    }

    if (found.empty()) {
        throw DataError("search: no valid pipeline in " + std::to_string(episodes) +
                        " episodes; increase the episode budget");
    }

    double q_lo = found[0].q_final, q_hi = found[0].q_final;
    for (const auto& sp : found) {
        q_lo = std::min(q_lo, sp.q_final);
        q_hi = std::max(q_hi, sp.q_final);
    }
    for (auto& sp : found) {
        sp.q_norm = q_hi > q_lo ? (sp.q_final - q_lo) / (q_hi - q_lo) : 0.5;
        sp.score = cfg.beta * sp.q_norm + (1.0 - cfg.beta) * sp.kscore;
    }
    std::stable_sort(found.begin(), found.end(), [](const ScoredPipeline& a, const ScoredPipeline& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.kscore != b.kscore) return a.kscore > b.kscore;
        return a.discovered_episode < b.discovered_episode;
    });
    if (static_cast<int>(found.size()) > cfg.k) found.resize(static_cast<std::size_t>(cfg.k));
    for (std::size_t i = 0; i < found.size(); ++i) found[i].rank = static_cast<int>(i) + 1;
    return found;
}

PredictResult predict_vanilla(const std::vector<ScoredPipeline>& ranked, const Table& train,
                              const Table& test, std::uint64_t seed) {
    if (ranked.empty()) throw UsageError("predict: empty pipeline list");
    for (const auto& sp : ranked) {
        try {
            const ExecutionResult r = execute(sp.dag, train, test,
                                              hash_combine(seed, fnv1a64("refit")));
            PredictResult out;
            out.predictions = r.predictions;
            out.accuracy = test.target() ? accuracy(r.predictions, *test.target()) : 0.0;
            out.used_rank = sp.rank;
            return out;
        } catch (const InvalidPipelineError& e) {
            std::cerr << "[gridpipe] rank " << sp.rank << " failed to refit (" << e.what()
                      << "), trying the next pipeline\n";
        }
    }
    throw DataError("predict: every ranked pipeline failed to refit");
}

PredictResult predict_ensemble(const std::vector<ScoredPipeline>& ranked, const Table& train,
                               const Table& test, std::uint64_t seed) {
    if (ranked.empty()) throw UsageError("predict: empty pipeline list");
    const std::vector<std::string> classes = train.class_levels();
    const int n = test.n_rows();

    std::vector<std::vector<std::vector<double>>> member_scores;
    std::vector<double> member_score_values;
    for (const auto& sp : ranked) {
        try {
            ExecutionResult r = execute(sp.dag, train, test, hash_combine(seed, fnv1a64("refit")));
            member_scores.push_back(std::move(r.class_scores));
            member_score_values.push_back(sp.score);
        } catch (const InvalidPipelineError& e) {
            std::cerr << "[gridpipe] rank " << sp.rank << " dropped from the ensemble ("
                      << e.what() << ")\n";
        }
    }
    if (member_scores.empty()) throw DataError("predict: every ensemble member failed to refit");

    double total = 0.0;
    for (double s : member_score_values) total += s;
    std::vector<double> weights(member_score_values.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        weights[i] = total > 0.0 ? member_score_values[i] / total
                                 : 1.0 / static_cast<double>(weights.size());
    }

    PredictResult out;
    out.predictions.resize(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        std::vector<double> mix(classes.size(), 0.0);
        for (std::size_t m = 0; m < member_scores.size(); ++m) {
            for (std::size_t c = 0; c < classes.size(); ++c) {
                mix[c] += weights[m] * member_scores[m][static_cast<std::size_t>(r)][c];
            }
        }
        int best = 0;
        for (int c = 1; c < static_cast<int>(classes.size()); ++c) {
            if (mix[static_cast<std::size_t>(c)] > mix[static_cast<std::size_t>(best)]) best = c;
        }
        out.predictions[static_cast<std::size_t>(r)] = classes[static_cast<std::size_t>(best)];
    }
    out.accuracy = test.target() ? accuracy(out.predictions, *test.target()) : 0.0;
    return out;
}

std::string scores_csv(const std::vector<ScoredPipeline>& ranked) {
    std::ostringstream out;
    out << "pipeline_id,KScore,Q_final,Qnorm,Score,rank\n";
    for (const auto& sp : ranked) {
        out << "pipeline_" << sp.rank << ',' << format_double(sp.kscore) << ','
            << format_double(sp.q_final) << ',' << format_double(sp.q_norm) << ','
            << format_double(sp.score) << ',' << sp.rank << '\n';
    }
    return out.str();
}

}  // namespace gridpipe
