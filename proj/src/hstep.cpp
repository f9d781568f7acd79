#include "gridpipe/hstep.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace gridpipe {

int ClusterSet::padding_count() const {
    int pad = 0;
    for (const auto& c : clusters) {
        for (int idx : c) pad += idx < 0 ? 1 : 0;
    }
    return pad;
}

ClusterSet make_clusters(std::span<const ActionCandidate* const> actions, int n,
                         std::uint64_t seed, int level) {
    if (actions.empty()) throw std::logic_error("make_clusters: empty action list");
    if (n < 2) throw UsageError("make_clusters: n must be >= 2");
    const int count = static_cast<int>(actions.size());
    const int k = (count + n - 1) / n;

    ClusterSet cs;
    cs.n = n;
    cs.level = level;

    std::vector<int> order(static_cast<std::size_t>(count));
    if (k <= 1) {
        for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    } else {
        const int dim = static_cast<int>(actions[0]->dense.size());
        Eigen::MatrixXd x(count, dim);
        for (int i = 0; i < count; ++i) {
            for (int j = 0; j < dim; ++j) x(i, j) = actions[static_cast<std::size_t>(i)]->dense[static_cast<std::size_t>(j)];
            const double norm = x.row(i).norm();
            if (norm > 0.0) x.row(i) /= norm;  // cosine distance on unit vectors
        }

        // k-means++ seeding.
        Rng rng(seed);
        Eigen::MatrixXd centroids(k, dim);
        centroids.row(0) = x.row(static_cast<int>(rng.bounded(static_cast<std::uint64_t>(count))));
        Eigen::VectorXd best_d = (x.rowwise() - centroids.row(0)).rowwise().squaredNorm();
        for (int j = 1; j < k; ++j) {
            const double total = best_d.sum();
            int pick;
            if (total <= 0.0) {
                pick = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(count)));
            } else {
                double target = rng.uniform() * total;
                pick = count - 1;
                for (int i = 0; i < count; ++i) {
                    target -= best_d(i);
                    if (target <= 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
            centroids.row(j) = x.row(pick);
            best_d = best_d.cwiseMin((x.rowwise() - centroids.row(j)).rowwise().squaredNorm());
        }

        // Lloyd iterations with spherical re-normalization.
        std::vector<int> assign(static_cast<std::size_t>(count), -1);
        const Eigen::VectorXd xsq = x.rowwise().squaredNorm();
        for (int iter = 0; iter < 20; ++iter) {
            const Eigen::MatrixXd g = x * centroids.transpose();  // count x k
            const Eigen::VectorXd csq = centroids.rowwise().squaredNorm();
            bool changed = false;
            for (int i = 0; i < count; ++i) {
                int best = 0;
                double bd = xsq(i) + csq(0) - 2.0 * g(i, 0);
                for (int j = 1; j < k; ++j) {
                    const double d = xsq(i) + csq(j) - 2.0 * g(i, j);
                    if (d < bd) {
                        bd = d;
                        best = j;
                    }
                }
                if (assign[static_cast<std::size_t>(i)] != best) {
                    assign[static_cast<std::size_t>(i)] = best;
                    changed = true;
                }
            }
            if (!changed) break;
            Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
            std::vector<int> sizes(static_cast<std::size_t>(k), 0);
            for (int i = 0; i < count; ++i) {
                sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
                ++sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
            }
            for (int j = 0; j < k; ++j) {
                if (sizes[static_cast<std::size_t>(j)] == 0) {
                    // Re-seed an empty centroid with the point farthest from
                    // its current assignment (deterministic: lowest index).
                    int far = 0;
                    double fd = -1.0;
                    for (int i = 0; i < count; ++i) {
                        const double d =
                            (x.row(i) - centroids.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
                        if (d > fd) {
                            fd = d;
                            far = i;
                        }
                    }
                    centroids.row(j) = x.row(far);
                    continue;
                }
                centroids.row(j) = sums.row(j) / sizes[static_cast<std::size_t>(j)];
                const double norm = centroids.row(j).norm();
                if (norm > 0.0) centroids.row(j) /= norm;
            }
        }

        // Greedy same-size assignment: centroids in index order, each takes
        // its n nearest unassigned candidates.
        const Eigen::MatrixXd g = x * centroids.transpose();
        const Eigen::VectorXd csq = centroids.rowwise().squaredNorm();
        std::vector<char> taken(static_cast<std::size_t>(count), 0);
        order.clear();
        for (int j = 0; j < k; ++j) {
            std::vector<std::pair<double, int>> cand;
            for (int i = 0; i < count; ++i) {
                if (taken[static_cast<std::size_t>(i)]) continue;
                cand.emplace_back(xsq(i) + csq(j) - 2.0 * g(i, j), i);
            }
            std::stable_sort(cand.begin(), cand.end());
            const int take = std::min(n, static_cast<int>(cand.size()));
            for (int i = 0; i < take; ++i) {
                taken[static_cast<std::size_t>(cand[static_cast<std::size_t>(i)].second)] = 1;
                order.push_back(cand[static_cast<std::size_t>(i)].second);
            }
        }
    }

    for (int j = 0; j < k; ++j) {
        std::vector<int> cluster(static_cast<std::size_t>(n), -1);
        for (int s = 0; s < n; ++s) {
            const int pos = j * n + s;
            if (pos < count) cluster[static_cast<std::size_t>(s)] = order[static_cast<std::size_t>(pos)];
        }
        cs.clusters.push_back(std::move(cluster));
    }
    return cs;
}

ClusterSet make_clusters(const std::vector<ActionCandidate>& actions, int n, std::uint64_t seed) {
    std::vector<const ActionCandidate*> ptrs;
    ptrs.reserve(actions.size());
    for (const auto& a : actions) ptrs.push_back(&a);
    return make_clusters(ptrs, n, seed);
}

TournamentResult run_tournament(const std::vector<ActionCandidate>& actions,
                                const ActionCandidate& padding, int n,
                                const ClusterEncoder& encode, const Selector& select,
                                std::uint64_t seed, bool want_trace) {
    if (actions.empty()) throw std::logic_error("run_tournament: empty open list");
    TournamentResult res;
    nlohmann::json trace = nlohmann::json::array();

    std::vector<const ActionCandidate*> current;
    current.reserve(actions.size());
    for (const auto& a : actions) current.push_back(&a);

    for (int level = 0;; ++level) {
        res.level_sizes.push_back(static_cast<int>(current.size()));
        const ClusterSet cs =
            make_clusters(current, n, hash_combine(seed, static_cast<std::uint64_t>(level)), level);
        if (want_trace) {
            nlohmann::json jc = nlohmann::json::array();
            for (const auto& cluster : cs.clusters) jc.push_back(cluster);
            trace.push_back({{"level", level}, {"clusters", jc}});
        }

        std::vector<const ActionCandidate*> winners;
        winners.reserve(cs.clusters.size());
        std::vector<const ActionCandidate*> slots(static_cast<std::size_t>(n), &padding);
        const bool final_level = cs.clusters.size() == 1;
        for (const auto& cluster : cs.clusters) {
            for (int s = 0; s < n; ++s) {
                const int idx = cluster[static_cast<std::size_t>(s)];
                slots[static_cast<std::size_t>(s)] = idx >= 0 ? current[static_cast<std::size_t>(idx)] : &padding;
            }
            StateVector state = encode(slots);
            int pick = select(state, slots, final_level);
            if (pick < 0 || pick >= n) throw std::logic_error("run_tournament: selector out of range");
            ++res.agent_queries;
            winners.push_back(slots[static_cast<std::size_t>(pick)]);  // padding propagates unchanged
            if (cs.clusters.size() == 1) {
                res.final_slot = pick;
                res.final_state = std::move(state);
            }
        }
        if (cs.clusters.size() == 1) {
            res.winner = winners[0];
            res.level_sizes.push_back(1);
            break;
        }
        current = std::move(winners);
    }
    if (want_trace) res.trace_json = nlohmann::json{{"levels", trace}}.dump();
    return res;
}

HStepResult hierarchical_step(Environment& env, const Selector& select, bool want_trace) {
    const std::vector<ActionCandidate> open = env.open_list();
    const ActionCandidate padding = env.padding_action();
    const std::uint64_t seed = hash_combine(env.episode_seed(),
                                            fnv1a64("hstep") ^ static_cast<std::uint64_t>(env.decision_index()));
    TournamentResult t = run_tournament(
        open, padding, env.config().cluster_size,
        [&env](std::span<const ActionCandidate* const> slots) { return env.encode_state(slots); },
        select, seed, want_trace);

    HStepResult out;
    out.final_state = std::move(t.final_state);
    out.action_index = t.final_slot;
    out.action = *t.winner;
    out.agent_queries = t.agent_queries;
    out.level_sizes = std::move(t.level_sizes);
    out.trace_json = std::move(t.trace_json);
    out.outcome = env.apply_action(out.action);
    return out;
}

}  // namespace gridpipe
