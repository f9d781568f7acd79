#include "gridpipe/pipeline.hpp"

#include "gridpipe/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace gridpipe {

Grid::Grid(int rows) : rows_(rows) {
    if (rows < 1) throw UsageError("grid: rows must be >= 1");
    cells_.resize(static_cast<std::size_t>(n_cells()));
}

const Cell& Grid::cell(int linear_index) const {
    if (linear_index < 1 || linear_index > n_cells()) {
        throw std::logic_error("grid: cell index out of range");
    }
    return cells_[static_cast<std::size_t>(linear_index - 1)];
}

void Grid::place(PipelineStep step) {
    if (off_grid()) throw std::logic_error("grid: place after episode end");
    const PrimitiveSpec& p = primitive_by_id(step.primitive_id);
    if (static_cast<int>(p.family) != cursor_col()) {
        throw std::logic_error("grid: primitive family does not match column");
    }
    if (step.inputs.empty()) throw std::logic_error("grid: step without inputs");
    std::unordered_set<int> seen;
    for (int ref : step.inputs) {
        if (!seen.insert(ref).second) throw std::logic_error("grid: duplicate input ref");
        if (ref == 0) continue;
        if (ref < 0 || ref >= cursor_linear()) {
            throw std::logic_error("grid: input ref not populated before this step");
        }
        if (cell(ref).state != CellState::Populated) {
            throw std::logic_error("grid: input ref is not a populated cell");
        }
        if (column_of(ref) > cursor_col()) {
            throw std::logic_error("grid: input ref from a later column");
        }
    }
    cells_[static_cast<std::size_t>(cursor_)].state = CellState::Populated;
    cells_[static_cast<std::size_t>(cursor_)].step = std::move(step);
    ++cursor_;
}

void Grid::place_blank() {
    if (off_grid()) throw std::logic_error("grid: place after episode end");
    cells_[static_cast<std::size_t>(cursor_)].state = CellState::Blank;
    ++cursor_;
}

int Grid::blank_count() const {
    int n = 0;
    for (const auto& c : cells_) n += c.state == CellState::Blank ? 1 : 0;
    return n;
}

int Grid::last_populated_in_row(int row) const {
    const int first = (row - 1) * kColumns + 1;
    const int limit = std::min(cursor_linear() - 1, first + kColumns - 1);
    for (int i = limit; i >= first; --i) {
        if (cell(i).state == CellState::Populated) return i;
    }
    return 0;
}

Grid Grid::from_steps(int rows, const std::vector<std::pair<int, PipelineStep>>& steps) {
    std::map<int, PipelineStep> by_cell(steps.begin(), steps.end());
    Grid g(rows);
    for (int i = 1; i <= g.n_cells(); ++i) {
        auto it = by_cell.find(i);
        if (it == by_cell.end()) {
            g.place_blank();
        } else {
            g.place(it->second);
        }
    }
    return g;
}

int PipelineDag::n_edges() const {
    int n = 0;
    for (const auto& v : vertices) n += static_cast<int>(v.inputs.size());
    return n;
}

const DagVertex* PipelineDag::find(int id) const {
    for (const auto& v : vertices) {
        if (v.id == id) return &v;
    }
    return nullptr;
}

std::vector<int> PipelineDag::terminal_ids() const {
    std::unordered_set<int> has_out;
    for (const auto& v : vertices) {
        for (int in : v.inputs) has_out.insert(in);
    }
    std::vector<int> out;
    for (const auto& v : vertices) {
        if (v.id != 0 && !has_out.count(v.id)) out.push_back(v.id);
    }
    return out;
}

bool PipelineDag::vertex_is_estimator(int id) const {
    const DagVertex* v = find(id);
    return v && v->id != 0 && primitive_by_id(v->primitive_id).is_estimator();
}

PipelineDag compile(const Grid& g) {
    PipelineDag dag;
    dag.grid_rows = g.rows();
    dag.vertices.push_back(DagVertex{0, 0, {}});
    for (int i = 1; i <= g.n_cells(); ++i) {
        const Cell& c = g.cell(i);
        if (c.state != CellState::Populated) continue;
        dag.vertices.push_back(DagVertex{i, c.step.primitive_id, c.step.inputs});
    }
    // Population order doubles as a topological order; every input must
    // precede its consumer and chain back to the raw source.
    std::unordered_set<int> known{0};
    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        for (int in : v.inputs) {
            if (!known.count(in) || in >= v.id) {
                throw std::logic_error("compile: edge violates population order");
            }
        }
        known.insert(v.id);
    }
    return dag;
}

FinalizeResult finalize(const PipelineDag& dag) {
    FinalizeResult res;
    bool any_estimator = false;
    int last_combiner = -1;
    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        const PrimitiveSpec& p = primitive_by_id(v.primitive_id);
        if (p.is_estimator()) any_estimator = true;
        if (p.family == Family::Combiner) last_combiner = std::max(last_combiner, v.id);
    }
    if (!any_estimator) return res;  // Invalid

    std::vector<int> terminal_estimators;
    for (int id : dag.terminal_ids()) {
        if (dag.vertex_is_estimator(id)) terminal_estimators.push_back(id);
    }
    if (terminal_estimators.size() == 1) {
        res.rule = FinalRule::SingleTerminal;
        res.final_vertex = terminal_estimators[0];
        return res;
    }
    if (last_combiner >= 0) {
        res.rule = FinalRule::Combiner;
        res.final_vertex = last_combiner;
        return res;
    }
    if (!terminal_estimators.empty()) {
        res.rule = FinalRule::MajorityVote;
        res.vote_vertices = terminal_estimators;
        return res;
    }
    // Estimators exist but none is terminal and there is no combiner; the
    // consuming vertices are transformers whose outputs dead-end.
    return res;
}

PipelineMeta pipeline_meta(const PipelineDag& dag, int n_blanks) {
    PipelineMeta m{};
    const int n_vertices = static_cast<int>(dag.vertices.size());
    m[0] = static_cast<double>(n_vertices);
    m[1] = static_cast<double>(dag.n_edges());
    int n_estimators = 0;
    int max_in = 0;
    std::unordered_map<int, int> depth;  // longest path from raw, in edges
    depth[0] = 0;
    int max_path = 0;
    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        if (primitive_by_id(v.primitive_id).is_estimator()) ++n_estimators;
        max_in = std::max(max_in, static_cast<int>(v.inputs.size()));
        int d = 0;
        for (int in : v.inputs) d = std::max(d, depth[in] + 1);
        depth[v.id] = d;
        max_path = std::max(max_path, d);
    }
    m[2] = static_cast<double>(n_estimators);
    m[3] = static_cast<double>(n_blanks);
    m[4] = static_cast<double>(max_in);
    m[5] = static_cast<double>(max_path);
    m[6] = n_vertices > 0 ? static_cast<double>(dag.n_edges()) / n_vertices : 0.0;
    return m;
}

PipelineMeta pipeline_meta(const PipelineDag& dag, const Grid& g) {
    return pipeline_meta(dag, g.blank_count());
}

namespace {

struct VertexOutputs {
    Table train;
    Table test;
};

int argmax_tie_low(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i) {
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

// Prediction label and per-class scores of an executed estimator vertex.
// Estimator outputs put "predict" first and one score column per class next.
void extract_scores(const Table& out, const std::vector<std::string>& classes,
                    std::vector<std::string>& labels, std::vector<std::vector<double>>& scores) {
    const int n = out.n_rows();
    labels = out.col(0).labels;
    scores.assign(static_cast<std::size_t>(n),
                  std::vector<double>(classes.size(), 0.0));
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const Column& sc = out.col(static_cast<int>(1 + c));
        for (int r = 0; r < n; ++r) scores[static_cast<std::size_t>(r)][c] = sc.numeric[static_cast<std::size_t>(r)];
    }
}

}  // namespace

ExecutionResult execute(const PipelineDag& dag, const Table& train, const Table& test,
                        std::uint64_t seed) {
    const FinalizeResult fin = finalize(dag);
    if (!fin.valid()) throw InvalidPipelineError("execute: pipeline has no estimator output");

    std::unordered_map<int, VertexOutputs> cache;
    cache.emplace(0, VertexOutputs{train, test});

    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        std::vector<const Table*> train_in, test_in;
        for (int in : v.inputs) {
            train_in.push_back(&cache.at(in).train);
            test_in.push_back(&cache.at(in).test);
        }
        Table merged_train = merge_inputs(train_in);
        Table merged_test = merge_inputs(test_in);
        const PrimitiveSpec& p = primitive_by_id(v.primitive_id);
        if (!can_accept(p, merged_train)) {
            throw InvalidPipelineError("execute: " + p.name + " cannot accept its input at cell " +
                                       std::to_string(v.id));
        }
        FitResult fr = fit_apply(p, merged_train, hash_combine(seed, static_cast<std::uint64_t>(v.id)),
                                 std::to_string(v.id));
        Table test_out = apply(fr.fitted, merged_test);
        cache.erase(v.id);
        cache.emplace(v.id, VertexOutputs{std::move(fr.output), std::move(test_out)});
    }

    ExecutionResult res;
    res.classes = train.class_levels();
    const int n_test = test.n_rows();

    if (fin.rule == FinalRule::SingleTerminal || fin.rule == FinalRule::Combiner) {
        extract_scores(cache.at(fin.final_vertex).test, res.classes, res.predictions,
                       res.class_scores);
        return res;
    }

    // Synthetic majority vote over terminal estimators; scores are the mean
    // of the voters' class scores, label ties break to the lowest class index.
    std::unordered_map<std::string, int> class_index;
    for (std::size_t c = 0; c < res.classes.size(); ++c) class_index[res.classes[c]] = static_cast<int>(c);
    res.class_scores.assign(static_cast<std::size_t>(n_test),
                            std::vector<double>(res.classes.size(), 0.0));
    std::vector<std::vector<int>> votes(static_cast<std::size_t>(n_test),
                                        std::vector<int>(res.classes.size(), 0));
    for (int id : fin.vote_vertices) {
        std::vector<std::string> labels;
        std::vector<std::vector<double>> scores;
        extract_scores(cache.at(id).test, res.classes, labels, scores);
        for (int r = 0; r < n_test; ++r) {
            ++votes[static_cast<std::size_t>(r)][static_cast<std::size_t>(class_index.at(labels[static_cast<std::size_t>(r)]))];
            for (std::size_t c = 0; c < res.classes.size(); ++c) {
                res.class_scores[static_cast<std::size_t>(r)][c] += scores[static_cast<std::size_t>(r)][c];
            }
        }
    }
    res.predictions.resize(static_cast<std::size_t>(n_test));
    const double n_voters = static_cast<double>(fin.vote_vertices.size());
    for (int r = 0; r < n_test; ++r) {
        std::vector<double> v(votes[static_cast<std::size_t>(r)].begin(), votes[static_cast<std::size_t>(r)].end());
        res.predictions[static_cast<std::size_t>(r)] = res.classes[static_cast<std::size_t>(argmax_tie_low(v))];
        for (auto& s : res.class_scores[static_cast<std::size_t>(r)]) s /= n_voters;
    }
    return res;
}

double accuracy(const std::vector<std::string>& predicted, const Column& target) {
    if (predicted.size() != target.labels.size()) {
        throw std::logic_error("accuracy: size mismatch");
    }
    if (predicted.empty()) return 0.0;
    int hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        hits += predicted[i] == target.labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

KScore evaluate_kfold(const PipelineDag& dag, const Table& train, int k, Metric metric,
                      std::uint64_t seed) {
    (void)metric;  // accuracy is the only implemented metric
    if (!finalize(dag).valid()) return {};
    std::vector<Fold> folds;
    try {
        folds = kfold_split(train, k, hash_combine(seed, fnv1a64("kfold")));
    } catch (const DataError&) {
        return {};
    }
    double total = 0.0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        try {
            const ExecutionResult r = execute(dag, folds[f].train, folds[f].valid,
                                              hash_combine(seed, f + 1));
            total += accuracy(r.predictions, *folds[f].valid.target());
        } catch (const InvalidPipelineError&) {
            return {};
        }
    }
    return {true, total / static_cast<double>(folds.size())};
}

namespace {

const char* rule_name(FinalRule r) {
    switch (r) {
        case FinalRule::SingleTerminal: return "single_terminal";
        case FinalRule::Combiner: return "combiner";
        case FinalRule::MajorityVote: return "majority_vote";
        case FinalRule::Invalid: return "invalid";
    }
    return "invalid";
}

}  // namespace

std::string pipeline_to_json(const PipelineDag& dag) {
    nlohmann::json steps = nlohmann::json::array();
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        const PrimitiveSpec& p = primitive_by_id(v.primitive_id);
        nlohmann::json hp = nlohmann::json::object();
        for (const auto& [key, val] : p.hyperparameters) hp[key] = val;
        steps.push_back({{"cell", v.id},
                         {"row", Grid::row_of(v.id)},
                         {"col", Grid::column_of(v.id)},
                         {"primitive", v.primitive_id},
                         {"name", p.name},
                         {"inputs", v.inputs},
                         {"hyperparameters", hp}});
        for (int in : v.inputs) edges.push_back({in, v.id});
    }
    const FinalizeResult fin = finalize(dag);
    nlohmann::json final_obj{{"rule", rule_name(fin.rule)}};
    if (fin.final_vertex >= 0) final_obj["vertex"] = fin.final_vertex;
    if (!fin.vote_vertices.empty()) final_obj["vote"] = fin.vote_vertices;
    nlohmann::json doc{{"format", "gridpipe-pipeline-v1"},
                       {"rows", dag.grid_rows},
                       {"steps", steps},
                       {"edges", edges},
                       {"final", final_obj}};
    return doc.dump(2);
}

PipelineDag pipeline_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("pipeline json: ") + e.what());
    }
    if (!doc.contains("rows") || !doc.contains("steps")) {
        throw DataError("pipeline json: missing rows/steps");
    }
    std::vector<std::pair<int, PipelineStep>> steps;
    for (const auto& s : doc["steps"]) {
        PipelineStep step;
        step.primitive_id = s.at("primitive").get<int>();
        step.inputs = s.at("inputs").get<std::vector<int>>();
        steps.emplace_back(s.at("cell").get<int>(), std::move(step));
    }
    try {
        return compile(Grid::from_steps(doc["rows"].get<int>(), steps));
    } catch (const std::logic_error& e) {
        throw DataError(std::string("pipeline json: ") + e.what());
    }
}

std::string pipeline_to_dot(const PipelineDag& dag) {
    std::ostringstream out;
    out << "digraph pipeline {\n  rankdir=LR;\n";
    out << "  v0 [label=\"raw dataset\", shape=folder];\n";
    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        const PrimitiveSpec& p = primitive_by_id(v.primitive_id);
        out << "  v" << v.id << " [label=\"#" << v.id << " " << p.name << "\", shape="
            << (p.is_estimator() ? "box" : "ellipse") << "];\n";
    }
    for (const auto& v : dag.vertices) {
        for (int in : v.inputs) out << "  v" << in << " -> v" << v.id << ";\n";
    }
    const FinalizeResult fin = finalize(dag);
    out << "  label=\"final rule: " << rule_name(fin.rule) << "\";\n}\n";
    return out.str();
}

std::uint64_t pipeline_structural_hash(const PipelineDag& dag) {
    std::ostringstream key;
    key << dag.grid_rows << ';';
    for (const auto& v : dag.vertices) {
        if (v.id == 0) continue;
        key << v.id << ':' << v.primitive_id << '[';
        for (int in : v.inputs) key << in << ',';
        key << "];";
    }
    return fnv1a64(key.str());
}

}  // namespace gridpipe
