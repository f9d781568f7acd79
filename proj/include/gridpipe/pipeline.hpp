#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridpipe/primitives.hpp"
#include "gridpipe/table.hpp"

namespace gridpipe {

/// One populated placeholder: a primitive plus its input sources. Source 0
/// is the raw dataset; source k > 0 is the linear index of a populated cell
/// ((row-1)*6 + col, 1-based). The first source is the mandatory row input.
struct PipelineStep {
    int primitive_id = 0;
    std::vector<int> inputs;
};

enum class CellState { Unvisited, Blank, Populated };

struct Cell {
    CellState state = CellState::Unvisited;
    PipelineStep step;  // meaningful only when Populated
};

/// The 6xN placeholder board. The cursor starts at (1,1), visits cells in
/// row-major order exactly once, and steps off the grid at episode end.
/// Column c only accepts primitives of family c.
class Grid {
public:
    static constexpr int kColumns = 6;

    explicit Grid(int rows);

    int rows() const { return rows_; }
    int n_cells() const { return rows_ * kColumns; }

    bool off_grid() const { return cursor_ >= n_cells(); }
    int cursor_linear() const { return cursor_ + 1; }            // 1-based
    int cursor_row() const { return cursor_ / kColumns + 1; }    // 1-based
    int cursor_col() const { return cursor_ % kColumns + 1; }    // 1-based

    const Cell& cell(int linear_index) const;  // 1..n_cells
    static int column_of(int linear_index) { return (linear_index - 1) % kColumns + 1; }
    static int row_of(int linear_index) { return (linear_index - 1) / kColumns + 1; }

    /// Populates the cursor cell and advances. Validates family/ref rules.
    void place(PipelineStep step);
    /// Marks the cursor cell blank and advances.
    void place_blank();

    int blank_count() const;
    /// Linear index of the last populated (non-blank) cell in `row` strictly
    /// before the cursor, or 0 (the raw dataset) if there is none.
    int last_populated_in_row(int row) const;

    /// Rebuilds a complete grid from its populated steps (all other cells
    /// blank); used when loading serialized pipelines.
    static Grid from_steps(int rows, const std::vector<std::pair<int, PipelineStep>>& steps);

private:
    int rows_;
    int cursor_ = 0;
    std::vector<Cell> cells_;
};

struct DagVertex {
    int id = 0;            // 0 = raw source, otherwise linear cell index
    int primitive_id = 0;  // 0 for the raw source
    std::vector<int> inputs;
};

/// Directed acyclic pipeline graph; vertex ids ascend in population order so
/// id order is a topological order.
struct PipelineDag {
    int grid_rows = 0;
    std::vector<DagVertex> vertices;  // vertices[0] is the raw source

    int n_edges() const;
    const DagVertex* find(int id) const;
    std::vector<int> terminal_ids() const;  // out-degree 0, raw excluded
    bool vertex_is_estimator(int id) const;
};

/// Drops blank cells and emits the DAG. Works on partial grids too (only
/// populated cells contribute), which the environment uses for mid-episode
/// state meta-data.
PipelineDag compile(const Grid& g);

enum class FinalRule { SingleTerminal, Combiner, MajorityVote, Invalid };

struct FinalizeResult {
    FinalRule rule = FinalRule::Invalid;
    int final_vertex = -1;          // for SingleTerminal / Combiner
    std::vector<int> vote_vertices;  // for MajorityVote

    bool valid() const { return rule != FinalRule::Invalid; }
};

/// Picks the vertex whose predictions are the pipeline output: the unique
/// terminal estimator/combiner if there is one; otherwise the latest
/// combiner; otherwise a synthetic majority vote over terminal estimators;
/// no estimator at all marks the pipeline invalid.
FinalizeResult finalize(const PipelineDag& dag);

/// Topology summary fed to the state vector:
/// {n_vertices, n_edges, n_estimators, n_blanks, max in-degree,
///  max path length, mean out-degree}.
constexpr int kPipelineMetaCount = 7;
using PipelineMeta = std::array<double, kPipelineMetaCount>;

PipelineMeta pipeline_meta(const PipelineDag& dag, const Grid& g);
PipelineMeta pipeline_meta(const PipelineDag& dag, int n_blanks);

struct ExecutionResult {
    std::vector<std::string> predictions;           // per test row
    std::vector<std::string> classes;               // class order for scores
    std::vector<std::vector<double>> class_scores;  // per test row, per class
};

/// Fits every vertex on its train-side merged inputs and applies it to the
/// test side in topological order; returns the finalized vertex's test-side
/// predictions. Throws InvalidPipelineError for unacceptable inputs at
/// execution time or estimator failures.
ExecutionResult execute(const PipelineDag& dag, const Table& train, const Table& test,
                        std::uint64_t seed);

struct KScore {
    bool valid = false;
    double score = 0.0;
};

/// Mean accuracy over k stratified folds of `train`. Any fold failing with
/// InvalidPipelineError marks the result invalid.
KScore evaluate_kfold(const PipelineDag& dag, const Table& train, int k, Metric metric,
                      std::uint64_t seed);

double accuracy(const std::vector<std::string>& predicted, const Column& target);

std::string pipeline_to_json(const PipelineDag& dag);
PipelineDag pipeline_from_json(const std::string& text);
std::string pipeline_to_dot(const PipelineDag& dag);
/// Stable digest of the pipeline structure, used to deduplicate candidates.
std::uint64_t pipeline_structural_hash(const PipelineDag& dag);

}  // namespace gridpipe
