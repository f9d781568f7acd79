#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gridpipe/environment.hpp"

namespace gridpipe {

/// Equal-sized clusters over an action list. Entries index the clustered
/// span; -1 marks padding slots that fill the last cluster to exactly n.
struct ClusterSet {
    int n = 0;
    int level = 0;
    std::vector<std::vector<int>> clusters;

    int padding_count() const;
};

/// Same-size k-means over the candidates' dense vectors: k = ceil(|A|/n)
/// centroids (k-means++ init, at most 20 iterations, cosine distance on
/// length-normalized vectors), then each centroid greedily takes its n
/// nearest unassigned candidates in index order. Deterministic in the seed.
ClusterSet make_clusters(std::span<const ActionCandidate* const> actions, int n,
                         std::uint64_t seed, int level = 0);
ClusterSet make_clusters(const std::vector<ActionCandidate>& actions, int n, std::uint64_t seed);

/// Agent decision for one cluster: index 0..n-1 of the chosen slot. The
/// state already carries the cluster's action vectors; the slot span names
/// the same candidates for callers that need them (oracles, traces), and
/// final_level marks the hierarchy level whose pick reaches the environment.
using Selector = std::function<int(const StateVector&, std::span<const ActionCandidate* const>,
                                   bool final_level)>;

/// Builds the state the agent sees for one cluster.
using ClusterEncoder = std::function<StateVector(std::span<const ActionCandidate* const>)>;

struct TournamentResult {
    const ActionCandidate* winner = nullptr;  // may be the padding action
    int final_slot = -1;                      // a_f within the final cluster
    StateVector final_state;                  // state of the final cluster
    int agent_queries = 0;
    std::vector<int> level_sizes;  // action-list size per level, then 1
    std::string trace_json;        // per-level cluster assignments, when traced
};

/// Elimination tournament over the open list: each level clusters the
/// survivors, the agent picks one winner per cluster, and winners form the
/// next level until a single cluster remains. Padding picks propagate
/// unchanged. Only the final level's state/action feed learning.
TournamentResult run_tournament(const std::vector<ActionCandidate>& actions,
                                const ActionCandidate& padding, int n,
                                const ClusterEncoder& encode, const Selector& select,
                                std::uint64_t seed, bool want_trace = false);

struct HStepResult {
    StateVector final_state;
    int action_index = -1;
    ActionCandidate action;
    StepOutcome outcome;
    int agent_queries = 0;
    std::vector<int> level_sizes;
    std::string trace_json;
};

/// One full environment decision through the plugin: open list, tournament,
/// env step. The agent only ever sees n-slot clusters.
HStepResult hierarchical_step(Environment& env, const Selector& select, bool want_trace = false);

}  // namespace gridpipe
