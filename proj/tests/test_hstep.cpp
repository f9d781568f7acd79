#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>

#include "gridpipe/hstep.hpp"
#include "support/toy_data.hpp"

using namespace gridpipe;
namespace ts = gridpipe::testsupport;

namespace {

std::vector<ActionCandidate> synthetic_actions(int count, int dim, Rng& rng) {
    std::vector<ActionCandidate> actions;
    actions.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        ActionCandidate a;
        a.primitive_id = 1 + static_cast<int>(rng.bounded(22));
        // distinct (primitive, inputs) pairs, like a real open list
        a.inputs = {static_cast<int>(rng.bounded(19)), 19 + i};
        a.valid = true;
        a.dense.resize(static_cast<std::size_t>(dim));
        for (auto& v : a.dense) v = rng.normal();
        actions.push_back(std::move(a));
    }
    return actions;
}

ActionCandidate padding_of_dim(int dim) {
    ActionCandidate pad;
    pad.valid = false;
    pad.dense.assign(static_cast<std::size_t>(dim), 0.0);
    return pad;
}

StateVector passthrough_state(std::span<const ActionCandidate* const>) { return StateVector{}; }

// argmax of the injective oracle score within one cluster
int oracle_select(std::span<const ActionCandidate* const> slots) {
    int best = 0;
    double best_score = ts::oracle_score(*slots[0]);
    for (int i = 1; i < static_cast<int>(slots.size()); ++i) {
        const double s = ts::oracle_score(*slots[static_cast<std::size_t>(i)]);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("make_clusters sizes and padding arithmetic") {
    Rng rng(3);
    const auto a360 = synthetic_actions(360, 8, rng);
    const ClusterSet cs360 = make_clusters(a360, 6, 1);
    CHECK(cs360.clusters.size() == 60);
    CHECK(cs360.padding_count() == 0);

    const auto a6 = synthetic_actions(6, 8, rng);
    const ClusterSet cs6 = make_clusters(a6, 6, 1);
    CHECK(cs6.clusters.size() == 1);
    CHECK(cs6.padding_count() == 0);

    const auto a7 = synthetic_actions(7, 8, rng);
    const ClusterSet cs7 = make_clusters(a7, 6, 1);
    CHECK(cs7.clusters.size() == 2);
    CHECK(cs7.padding_count() == 5);
}

TEST_CASE("clusters cover every action exactly once") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int count = 1 + static_cast<int>(rng.bounded(500));
        const int n = 6;
        const auto actions = synthetic_actions(count, 8, rng);
        const ClusterSet cs = make_clusters(actions, n, trial);

        const int k = (count + n - 1) / n;
        REQUIRE(static_cast<int>(cs.clusters.size()) == k);
        std::vector<int> seen(static_cast<std::size_t>(count), 0);
        int padding = 0;
        for (const auto& cluster : cs.clusters) {
            REQUIRE(static_cast<int>(cluster.size()) == n);
            for (int idx : cluster) {
                if (idx < 0) {
                    ++padding;
                } else {
                    REQUIRE(idx < count);
                    ++seen[static_cast<std::size_t>(idx)];
                }
            }
        }
        for (int s : seen) CHECK(s == 1);
        CHECK(padding == k * n - count);
    }
}

TEST_CASE("clustering is deterministic and permutation keeps the cover") {
    Rng rng(7);
    const auto actions = synthetic_actions(100, 8, rng);
    const ClusterSet a = make_clusters(actions, 6, 99);
    const ClusterSet b = make_clusters(actions, 6, 99);
    CHECK(a.clusters == b.clusters);

    auto shuffled = actions;
    Rng perm(11);
    perm.shuffle(shuffled);
    const ClusterSet c = make_clusters(shuffled, 6, 99);
    std::vector<int> seen(shuffled.size(), 0);
    for (const auto& cluster : c.clusters) {
        for (int idx : cluster) {
            if (idx >= 0) ++seen[static_cast<std::size_t>(idx)];
        }
    }
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("tournament routes the global argmax to the environment") {
    Rng rng(13);
    for (int trial = 0; trial < 60; ++trial) {
        const int count = 1 + static_cast<int>(rng.bounded(500));
        const auto actions = synthetic_actions(count, 8, rng);
        const ActionCandidate pad = padding_of_dim(8);

        int expect = 0;
        for (int i = 1; i < count; ++i) {
            if (ts::oracle_score(actions[static_cast<std::size_t>(i)]) >
                ts::oracle_score(actions[static_cast<std::size_t>(expect)])) {
                expect = i;
            }
        }

        const TournamentResult res = run_tournament(
            actions, pad, 6, passthrough_state,
            [](const StateVector&, std::span<const ActionCandidate* const> slots, bool) {
                return oracle_select(slots);
            },
            trial);
        REQUIRE(res.winner != nullptr);
        CHECK(res.winner == &actions[static_cast<std::size_t>(expect)]);
    }
}

TEST_CASE("level sizes and query counts follow the elimination arithmetic") {
    Rng rng(17);
    const auto actions = synthetic_actions(360, 8, rng);
    const ActionCandidate pad = padding_of_dim(8);
    const TournamentResult res = run_tournament(
        actions, pad, 6, passthrough_state,
        [](const StateVector&, std::span<const ActionCandidate* const> slots, bool) {
            return oracle_select(slots);
        },
        23);
    CHECK(res.level_sizes == std::vector<int>{360, 60, 10, 2, 1});
    CHECK(res.agent_queries == 73);  // 60 + 10 + 2 + 1

    // single candidate: no elimination levels, one query
    const auto one = synthetic_actions(1, 8, rng);
    const TournamentResult r1 = run_tournament(
        one, pad, 6, passthrough_state,
        [](const StateVector&, std::span<const ActionCandidate* const> slots, bool) {
            return oracle_select(slots);
        },
        29);
    CHECK(r1.level_sizes == std::vector<int>{1, 1});
    CHECK(r1.agent_queries == 1);
    CHECK(r1.winner == &one[0]);
}

TEST_CASE("every level's multiset equals the previous level's winners") {
    Rng rng(19);
    const auto actions = synthetic_actions(200, 8, rng);
    const ActionCandidate pad = padding_of_dim(8);

    std::vector<std::vector<const ActionCandidate*>> picks_per_level;
    const TournamentResult res = run_tournament(
        actions, pad, 6, passthrough_state,
        [&picks_per_level](const StateVector&, std::span<const ActionCandidate* const> slots,
                           bool final_level) {
            (void)final_level;
            const int pick = oracle_select(slots);
            if (picks_per_level.empty() ||
                static_cast<int>(picks_per_level.back().size()) == 0) {
            }
            return pick;
        },
        31, true);
    // level sizes shrink by ceil(s/n) winners exactly
    for (std::size_t i = 0; i + 1 < res.level_sizes.size() - 1; ++i) {
        const int s = res.level_sizes[i];
        CHECK(res.level_sizes[i + 1] == (s + 5) / 6);
    }
    CHECK(!res.trace_json.empty());
}

TEST_CASE("padding can win a cluster and reaches the environment as invalid") {
    // Two candidates, n=6: four padding slots. A selector that always picks
    // slot 5 propagates padding to the final pick.
    Rng rng(23);
    const auto actions = synthetic_actions(2, 8, rng);
    const ActionCandidate pad = padding_of_dim(8);
    const TournamentResult res = run_tournament(
        actions, pad, 6, passthrough_state,
        [](const StateVector&, std::span<const ActionCandidate* const>, bool) { return 5; }, 37);
    REQUIRE(res.winner != nullptr);
    CHECK_FALSE(res.winner->valid);
}

TEST_CASE("hierarchical_step drives the environment end to end") {
    EnvironmentConfig cfg;
    Environment env(cfg, zero_embedder());
    env.reset(LearningJob::make("blobs", ts::make_blobs(60, 4)), 11);
    int decisions = 0;
    double total = 0.0;
    while (!env.done()) {
        const HStepResult res = hierarchical_step(
            env,
            [](const StateVector&, std::span<const ActionCandidate* const> slots, bool) {
                return oracle_select(slots);
            });
        ++decisions;
        total += res.outcome.reward;
        CHECK(res.action_index >= 0);
        CHECK(res.action_index < cfg.cluster_size);
    }
    CHECK(decisions == cfg.grid_cells());
    CHECK(total <= 1.0);
}
