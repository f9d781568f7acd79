#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "gridpipe/pipeline.hpp"
#include "gridpipe/split.hpp"
#include "gridpipe/table.hpp"

namespace gridpipe {

struct EnvironmentConfig {
    int rows = 3;           // N
    int max_inputs = 3;     // N_in
    int cluster_size = 6;   // n actions per cluster
    int k_folds = 3;
    double penalty = -1.0;
    double gamma = 0.99;
    int embed_dim = 15;
    // Above this many (input-set x primitive) combinations per cell, the
    // meta-features of non-mandatory merges reuse the mandatory input's
    // vector to bound per-step cost.
    int candidate_meta_cap = 3000;
    // Plugin disabled: the agent faces the full enumerated action table and
    // actions are identified by index alone (no per-action features).
    bool flat_mode = false;

    int grid_cells() const { return rows * Grid::kColumns; }
    int action_feature_dim() const {
        return flat_mode ? 0 : embed_dim + max_inputs + kMetaFeatureCount;
    }
    int job_vector_dim() const { return kTaskCount + kMetricCount + kMetaFeatureCount; }
};

/// One legal (primitive, input set) choice at the cursor cell. Padding slots
/// (valid == false) exist only to fill clusters to exactly n entries.
struct ActionCandidate {
    int primitive_id = 0;      // 0 = blank
    std::vector<int> inputs;   // mandatory source first
    bool valid = false;
    std::vector<double> dense;  // embedding | normalized refs | merged-input meta-features

    bool is_blank() const { return valid && primitive_id == 0; }
};

/// Fixed-size state encoding. grid_primitives feeds the embedding table
/// (-1 = unvisited sentinel, 0 = blank); everything else is already numeric.
struct StateVector {
    std::vector<int> grid_primitives;    // 6N
    std::vector<double> grid_inputs;     // 6N * N_in, refs / (6N), absent = -1
    std::vector<double> pipeline_meta;   // 7
    std::vector<double> input_meta;      // 12, meta-features of the mandatory input
    std::vector<double> job_vector;      // task one-hot | metric one-hot | raw meta-features
    std::vector<double> action_vectors;  // n * action_feature_dim
    std::vector<std::uint8_t> action_valid;  // n

    bool operator==(const StateVector&) const = default;
};

/// Reads a row of the live embedding table; the environment uses it to build
/// candidate vectors, so cluster geometry follows the network as it learns.
using Embedder = std::function<void(int primitive_id, std::span<double> out)>;

/// Zero-embedding stand-in for tests and tools that run without a network.
Embedder zero_embedder();

struct StepOutcome {
    double reward = 0.0;
    bool done = false;
    bool pipeline_valid = false;  // meaningful when done
    double kscore = 0.0;          // meaningful when done && pipeline_valid
};

/// Flat-mode action: a (primitive, extra-source pattern) entry in the fixed
/// global table. Index 0 is the blank action.
struct FlatAction {
    int primitive_id = 0;
    std::vector<int> extras;  // absolute source ids, ascending
};

std::vector<FlatAction> build_flat_action_table(const EnvironmentConfig& cfg);

/// The MDP. One episode populates the grid row-major, one decision per cell;
/// stepping off the grid compiles, finalizes and k-fold-evaluates the
/// pipeline, and the score (or the penalty) becomes the terminal reward.
class Environment {
public:
    Environment(EnvironmentConfig cfg, Embedder embedder);

    const EnvironmentConfig& config() const { return cfg_; }

    /// Starts an episode on the job's dataset (also the evaluation train
    /// table). Requires >= 2 classes and every class >= k_folds rows.
    void reset(const LearningJob& job, std::uint64_t episode_seed);

    bool done() const { return grid_ && grid_->off_grid(); }
    const Grid& grid() const { return *grid_; }
    int decision_index() const { return decisions_; }
    std::uint64_t episode_seed() const { return episode_seed_; }

    /// Alg-1 open list for the cursor cell: every (family primitive, input
    /// subset) pair the primitive can accept, plus the always-legal blank.
    std::vector<ActionCandidate> open_list() const;

    ActionCandidate blank_action() const;
    ActionCandidate padding_action() const;

    /// Applies the final-hierarchy action: populates or blanks the cursor
    /// cell (padding actions blank it at the penalty) and advances. The
    /// terminal decision returns the pipeline evaluation as its reward.
    StepOutcome apply_action(const ActionCandidate& action);

    /// State with A_c zeroed (flat mode) or before cluster augmentation.
    StateVector encode_base() const;
    /// State seen by the agent for one cluster; null slots are padding.
    StateVector encode_state(std::span<const ActionCandidate* const> slots) const;

    int mandatory_source() const;  // 0 = raw dataset
    const Table& source_table(int source_id) const;
    const TableSummary& source_summary(int source_id) const;
    const Table& train_table() const;

    /// Resolves a flat-table entry against the current open list; nullopt
    /// when the entry is not legal here (out-of-open-list -> penalty).
    std::optional<ActionCandidate> resolve_flat(const FlatAction& fa,
                                                const std::vector<ActionCandidate>& open) const;

    /// Structure of the episode's pipeline so far (raw source + populated
    /// cells); callers use it for state meta-data and final serialization.
    PipelineDag current_dag() const { return compile(*grid_); }

private:
    std::vector<double> candidate_dense(int primitive_id, const std::vector<int>& refs,
                                        const MetaFeatures& meta) const;
    void fit_cell(int cell_id, const PipelineStep& step);

    EnvironmentConfig cfg_;
    Embedder embedder_;
    std::optional<LearningJob> job_;  // owned copy; tables are cheap at desk scale
    std::optional<Grid> grid_;
    std::unordered_map<int, Table> cell_tables_;        // 0 = raw train table
    std::unordered_map<int, TableSummary> cell_summaries_;
    std::uint64_t episode_seed_ = 0;
    int decisions_ = 0;
    bool tainted_ = false;  // a cell failed to fit mid-episode
};

}  // namespace gridpipe
