#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridpipe/agent.hpp"

namespace gridpipe {

struct SearchConfig {
    int k = 10;        // pipelines to return / ensemble size
    int episodes = 0;  // 0 -> 5 * k
    double beta = 0.5;
    double eval_epsilon = 0.05;
    std::uint64_t seed = 0;

    int resolved_episodes() const { return episodes > 0 ? episodes : 5 * k; }
};

struct ScoredPipeline {
    PipelineDag dag;
    std::string pipeline_json;
    double kscore = 0.0;
    double q_final = 0.0;
    double q_norm = 0.0;
    double score = 0.0;  // beta * q_norm + (1 - beta) * kscore
    int rank = 0;        // 1-based
    std::uint64_t structure_hash = 0;
    int discovered_episode = 0;
};

/// Runs eval-epsilon episodes with the trained network, collects distinct
/// valid pipelines with their KScore and the Q-value of the episode's last
/// final-hierarchy action, min-max-normalizes Q across the candidates
/// (all-equal -> 0.5) and returns the top-K by Score (ties: KScore, then
/// discovery order). Fewer than K distinct pipelines returns what was found;
/// zero raises DataError advising a larger episode budget.
std::vector<ScoredPipeline> search(const LearningJob& job, const QNetwork& net,
                                   const EnvironmentConfig& env_cfg, const SearchConfig& cfg);

struct PredictResult {
    std::vector<std::string> predictions;
    double accuracy = 0.0;
    int used_rank = 0;  // vanilla: the rank that refitted successfully
};

/// Refits the top-ranked pipeline on the full train split and predicts the
/// test split; a refit failure falls through to the next rank with a log.
PredictResult predict_vanilla(const std::vector<ScoredPipeline>& ranked, const Table& train,
                              const Table& test, std::uint64_t seed);

/// Score-weighted soft vote over the pipelines' per-class score vectors
/// (all-zero scores -> uniform weights); label ties break to the lowest
/// class index. Pipelines failing refit drop out; all failing is an error.
PredictResult predict_ensemble(const std::vector<ScoredPipeline>& ranked, const Table& train,
                               const Table& test, std::uint64_t seed);

/// scores.csv body: pipeline_id,KScore,Q_final,Qnorm,Score,rank.
std::string scores_csv(const std::vector<ScoredPipeline>& ranked);

}  // namespace gridpipe
