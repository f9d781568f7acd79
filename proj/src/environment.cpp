#include "gridpipe/environment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace gridpipe {

Embedder zero_embedder() {
    return [](int, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
}

std::vector<FlatAction> build_flat_action_table(const EnvironmentConfig& cfg) {
    std::vector<FlatAction> table;
    table.push_back(FlatAction{});  // index 0: blank
    const int cells = cfg.grid_cells();
    const int max_extras = cfg.max_inputs - 1;
    std::vector<std::vector<int>> patterns{{}};
    // patterns in (size ascending, lexicographic) order over source ids 1..6N
    std::vector<std::vector<int>> level{{}};
    for (int size = 1; size <= max_extras; ++size) {
        std::vector<std::vector<int>> next;
        for (const auto& base : level) {
            const int start = base.empty() ? 1 : base.back() + 1;
            for (int s = start; s <= cells; ++s) {
                auto e = base;
                e.push_back(s);
                next.push_back(std::move(e));
            }
        }
        patterns.insert(patterns.end(), next.begin(), next.end());
        level = std::move(next);
    }
    for (const auto& p : catalog()) {
        for (const auto& extras : patterns) {
            table.push_back(FlatAction{p.id, extras});
        }
    }
    return table;
}

Environment::Environment(EnvironmentConfig cfg, Embedder embedder)
    : cfg_(cfg), embedder_(std::move(embedder)) {
    if (cfg_.rows < 1 || cfg_.max_inputs < 1 || cfg_.cluster_size < 2) {
        throw UsageError("environment: rows >= 1, max_inputs >= 1, cluster_size >= 2 required");
    }
    if (!(cfg_.gamma > 0.0 && cfg_.gamma <= 1.0)) {
        throw UsageError("environment: gamma must be in (0,1]");
    }
}

void Environment::reset(const LearningJob& job, std::uint64_t episode_seed) {
    const Table& d = job.dataset;
    if (!d.target()) throw DataError("reset: dataset has no target column");
    const auto levels = d.class_levels();
    if (levels.size() < 2) throw DataError("reset: dataset needs at least 2 classes");
    const auto codes = d.target_codes(levels);
    std::vector<int> counts(levels.size(), 0);
    for (int c : codes) ++counts[static_cast<std::size_t>(c)];
    for (int c : counts) {
        if (c < cfg_.k_folds) {
            throw DataError("reset: every class needs at least k_folds rows");
        }
    }
    job_ = job;
    grid_.emplace(cfg_.rows);
    cell_tables_.clear();
    cell_summaries_.clear();
    cell_summaries_.emplace(0, summarize(d));
    episode_seed_ = episode_seed;
    decisions_ = 0;
    tainted_ = false;
}

const Table& Environment::train_table() const {
    if (!job_) throw std::logic_error("environment: reset not called");
    return job_->dataset;
}

const Table& Environment::source_table(int source_id) const {
    if (source_id == 0) return train_table();
    return cell_tables_.at(source_id);
}

const TableSummary& Environment::source_summary(int source_id) const {
    return cell_summaries_.at(source_id);
}

int Environment::mandatory_source() const {
    if (!grid_ || grid_->off_grid()) throw std::logic_error("mandatory_source: no cursor");
    return grid_->last_populated_in_row(grid_->cursor_row());
}

std::vector<double> Environment::candidate_dense(int primitive_id, const std::vector<int>& refs,
                                                 const MetaFeatures& meta) const {
    std::vector<double> dense(static_cast<std::size_t>(cfg_.action_feature_dim()), 0.0);
    if (dense.empty()) return dense;
    embedder_(primitive_id, std::span<double>(dense.data(), static_cast<std::size_t>(cfg_.embed_dim)));
    const double denom = static_cast<double>(cfg_.grid_cells());
    for (int i = 0; i < cfg_.max_inputs; ++i) {
        dense[static_cast<std::size_t>(cfg_.embed_dim + i)] =
            i < static_cast<int>(refs.size()) ? static_cast<double>(refs[static_cast<std::size_t>(i)]) / denom : -1.0;
    }
    for (int i = 0; i < kMetaFeatureCount; ++i) {
        dense[static_cast<std::size_t>(cfg_.embed_dim + cfg_.max_inputs + i)] = meta[static_cast<std::size_t>(i)];
    }
    return dense;
}

ActionCandidate Environment::blank_action() const {
    const int mand = mandatory_source();
    ActionCandidate a;
    a.primitive_id = 0;
    a.inputs = {mand};
    a.valid = true;
    a.dense = candidate_dense(0, a.inputs, metafeatures_from(source_summary(mand)));
    return a;
}

ActionCandidate Environment::padding_action() const {
    ActionCandidate a;
    a.valid = false;
    a.dense.assign(static_cast<std::size_t>(cfg_.action_feature_dim()), 0.0);
    for (int i = 0; i < cfg_.max_inputs && !a.dense.empty(); ++i) {
        a.dense[static_cast<std::size_t>(cfg_.embed_dim + i)] = -1.0;
    }
    return a;
}

std::vector<ActionCandidate> Environment::open_list() const {
    if (!grid_ || grid_->off_grid()) throw std::logic_error("open_list: episode finished");
    const int r = grid_->cursor_row();
    const int c = grid_->cursor_col();
    const int mand = mandatory_source();

    // O: outputs of populated cells in earlier rows with column <= c, plus
    // the mandatory row input (raw dataset when the row is still empty).
    std::vector<int> extras;
    for (int i = 1; i <= (r - 1) * Grid::kColumns; ++i) {
        if (grid_->cell(i).state == CellState::Populated && Grid::column_of(i) <= c) {
            extras.push_back(i);
        }
    }

    // Input sets: all subsets containing the mandatory source, size <= N_in.
    std::vector<std::vector<int>> subsets{{mand}};
    std::vector<std::vector<int>> frontier{{}};
    for (int size = 1; size <= cfg_.max_inputs - 1; ++size) {
        std::vector<std::vector<int>> next;
        for (const auto& base : frontier) {
            const std::size_t start =
                base.empty() ? 0
                             : static_cast<std::size_t>(std::find(extras.begin(), extras.end(), base.back()) -
                                                        extras.begin()) + 1;
            for (std::size_t i = start; i < extras.size(); ++i) {
                auto e = base;
                e.push_back(extras[i]);
                next.push_back(e);
                auto s = e;
                s.insert(s.begin(), mand);
                subsets.push_back(std::move(s));
            }
        }
        frontier = std::move(next);
    }

    std::vector<const PrimitiveSpec*> family;
    for (const auto& p : catalog()) {
        if (static_cast<int>(p.family) == c) family.push_back(&p);
    }

    const bool cap_meta =
        static_cast<long>(subsets.size()) * static_cast<long>(family.size()) >
        static_cast<long>(cfg_.candidate_meta_cap);
    const MetaFeatures mand_meta = metafeatures_from(source_summary(mand));

    // Merged-input summaries once per subset, shared across primitives.
    std::vector<TableSummary> merged(subsets.size());
    std::vector<MetaFeatures> metas(subsets.size());
    for (std::size_t i = 0; i < subsets.size(); ++i) {
        std::vector<const TableSummary*> parts;
        for (int src : subsets[i]) parts.push_back(&source_summary(src));
        merged[i] = merge_summaries(parts);
        metas[i] = (cap_meta && i > 0) ? mand_meta : metafeatures_from(merged[i]);
    }

    std::vector<ActionCandidate> open;
    for (const PrimitiveSpec* p : family) {
        for (std::size_t i = 0; i < subsets.size(); ++i) {
            if (!can_accept(*p, merged[i])) continue;
            ActionCandidate a;
            a.primitive_id = p->id;
            a.inputs = subsets[i];
            a.valid = true;
            a.dense = candidate_dense(p->id, a.inputs, metas[i]);
            open.push_back(std::move(a));
        }
    }
    open.push_back(blank_action());
    return open;
}

void Environment::fit_cell(int cell_id, const PipelineStep& step) {
    std::vector<const Table*> inputs;
    for (int src : step.inputs) inputs.push_back(&source_table(src));
    Table merged = merge_inputs(inputs);
    const PrimitiveSpec& p = primitive_by_id(step.primitive_id);
    try {
        FitResult fr = fit_apply(p, merged, hash_combine(episode_seed_, fnv1a64("cellfit") ^ static_cast<std::uint64_t>(cell_id)),
                                 std::to_string(cell_id));
        cell_summaries_.emplace(cell_id, summarize(fr.output));
        cell_tables_.emplace(cell_id, std::move(fr.output));
    } catch (const InvalidPipelineError&) {
        // Keep the episode going with a pass-through output; the terminal
        // reward becomes the penalty.
        tainted_ = true;
        cell_summaries_.emplace(cell_id, summarize(merged));
        cell_tables_.emplace(cell_id, std::move(merged));
    }
}

StepOutcome Environment::apply_action(const ActionCandidate& action) {
    if (!grid_) throw std::logic_error("apply_action: reset not called");
    if (grid_->off_grid()) throw std::logic_error("apply_action: episode already finished");

    const bool invalid_pick = !action.valid;
    if (invalid_pick || action.primitive_id == 0) {
        grid_->place_blank();
    } else {
        const int cell_id = grid_->cursor_linear();
        grid_->place(PipelineStep{action.primitive_id, action.inputs});
        fit_cell(cell_id, grid_->cell(cell_id).step);
    }
    ++decisions_;

    StepOutcome out;
    if (!grid_->off_grid()) {
        out.reward = invalid_pick ? cfg_.penalty : 0.0;
        return out;
    }

    // Terminal: one reward only. An invalid final pick takes the penalty in
    // place of the evaluation so per-step rewards stay within [-1, 1].
    out.done = true;
    if (invalid_pick || tainted_) {
        out.reward = cfg_.penalty;
        return out;
    }
    const PipelineDag dag = compile(*grid_);
    const KScore ks = evaluate_kfold(dag, train_table(), cfg_.k_folds, job_->metric,
                                     hash_combine(episode_seed_, fnv1a64("episode_eval")));
    out.pipeline_valid = ks.valid;
    out.kscore = ks.score;
    out.reward = ks.valid ? ks.score : cfg_.penalty;
    return out;
}

StateVector Environment::encode_base() const {
    if (!job_) throw std::logic_error("encode: reset not called");
    StateVector s;
    const int cells = cfg_.grid_cells();
    s.grid_primitives.assign(static_cast<std::size_t>(cells), -1);
    s.grid_inputs.assign(static_cast<std::size_t>(cells * cfg_.max_inputs), -1.0);
    const double denom = static_cast<double>(cells);
    for (int i = 1; i <= cells; ++i) {
        const Cell& cell = grid_->cell(i);
        if (cell.state == CellState::Unvisited) continue;
        s.grid_primitives[static_cast<std::size_t>(i - 1)] =
            cell.state == CellState::Blank ? 0 : cell.step.primitive_id;
        if (cell.state == CellState::Populated) {
            for (std::size_t k = 0; k < cell.step.inputs.size() &&
                                    k < static_cast<std::size_t>(cfg_.max_inputs); ++k) {
                s.grid_inputs[static_cast<std::size_t>((i - 1) * cfg_.max_inputs) + k] =
                    static_cast<double>(cell.step.inputs[k]) / denom;
            }
        }
    }

    const PipelineDag dag = compile(*grid_);
    const PipelineMeta pm = pipeline_meta(dag, *grid_);
    s.pipeline_meta.assign(pm.begin(), pm.end());

    const MetaFeatures om = grid_->off_grid()
                                ? job_->raw_metafeatures
                                : metafeatures_from(source_summary(mandatory_source()));
    s.input_meta.assign(om.begin(), om.end());

    s.job_vector.assign(static_cast<std::size_t>(cfg_.job_vector_dim()), 0.0);
    s.job_vector[static_cast<std::size_t>(static_cast<int>(job_->task))] = 1.0;
    s.job_vector[static_cast<std::size_t>(kTaskCount + static_cast<int>(job_->metric))] = 1.0;
    for (int i = 0; i < kMetaFeatureCount; ++i) {
        s.job_vector[static_cast<std::size_t>(kTaskCount + kMetricCount + i)] =
            job_->raw_metafeatures[static_cast<std::size_t>(i)];
    }

    // A_c starts as all-padding (also the terminal-state convention).
    const ActionCandidate pad = padding_action();
    s.action_vectors.reserve(static_cast<std::size_t>(cfg_.cluster_size) * pad.dense.size());
    for (int i = 0; i < cfg_.cluster_size && !cfg_.flat_mode; ++i) {
        s.action_vectors.insert(s.action_vectors.end(), pad.dense.begin(), pad.dense.end());
    }
    s.action_valid.assign(static_cast<std::size_t>(cfg_.flat_mode ? 0 : cfg_.cluster_size), 0);
    return s;
}

StateVector Environment::encode_state(std::span<const ActionCandidate* const> slots) const {
    StateVector s = encode_base();
    if (cfg_.flat_mode) return s;
    if (static_cast<int>(slots.size()) != cfg_.cluster_size) {
        throw std::logic_error("encode_state: cluster must have exactly n slots");
    }
    const std::size_t dim = static_cast<std::size_t>(cfg_.action_feature_dim());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) continue;  // keep the padding pattern
        std::copy(slots[i]->dense.begin(), slots[i]->dense.end(),
                  s.action_vectors.begin() + static_cast<std::ptrdiff_t>(i * dim));
        s.action_valid[i] = slots[i]->valid ? 1 : 0;
    }
    return s;
}

std::optional<ActionCandidate> Environment::resolve_flat(
    const FlatAction& fa, const std::vector<ActionCandidate>& open) const {
    if (fa.primitive_id == 0) return blank_action();
    const int mand = mandatory_source();
    for (const auto& a : open) {
        if (a.primitive_id != fa.primitive_id) continue;
        if (a.inputs.empty() || a.inputs[0] != mand) continue;
        if (a.inputs.size() != fa.extras.size() + 1) continue;
        if (std::equal(a.inputs.begin() + 1, a.inputs.end(), fa.extras.begin())) return a;
    }
    return std::nullopt;
}

}  // namespace gridpipe
