#include "gridpipe/primitives.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace gridpipe {

namespace {

PrimitiveSpec make_spec(int id, std::string name, Family family, Algo algo, bool miss,
                        bool cat, bool nonneg, std::map<std::string, double> hp = {}) {
    PrimitiveSpec s;
    s.id = id;
    s.name = std::move(name);
    s.family = family;
    s.algo = algo;
    s.handles_missing = miss;
    s.handles_categorical = cat;
    s.requires_nonnegative = nonneg;
    s.hyperparameters = std::move(hp);
    return s;
}

std::vector<PrimitiveSpec> build_catalog() {
    std::vector<PrimitiveSpec> c;
    c.push_back(make_spec(1, "impute_mean_mode", Family::DataPreprocessing, Algo::ImputeMeanMode,
                          true, true, false));
    c.push_back(make_spec(2, "one_hot_encode", Family::DataPreprocessing, Algo::OneHot,
                          true, true, false));
    c.push_back(make_spec(3, "drop_constant", Family::DataPreprocessing, Algo::DropConstant,
                          true, true, false));
    c.push_back(make_spec(4, "minmax_scale", Family::FeaturePreprocessing, Algo::MinMaxScale,
                          false, false, false));
    c.push_back(make_spec(5, "standardize", Family::FeaturePreprocessing, Algo::Standardize,
                          false, false, false));
    c.push_back(make_spec(6, "discretize_eqwidth", Family::FeaturePreprocessing, Algo::Discretize,
                          false, false, false, {{"bins", 5}}));
    c.push_back(make_spec(7, "select_variance", Family::FeatureSelection, Algo::SelectVariance,
                          false, false, false, {{"keep_fraction", 0.5}}));
    c.push_back(make_spec(8, "select_mutual_info", Family::FeatureSelection, Algo::SelectMutualInfo,
                          false, true, false, {{"keep_fraction", 0.5}, {"bins", 5}}));
    c.push_back(make_spec(9, "select_chi2", Family::FeatureSelection, Algo::SelectChi2,
                          false, false, true, {{"keep_fraction", 0.5}}));
    c.push_back(make_spec(10, "pca_project", Family::FeatureEngineering, Algo::PcaProject,
                          false, false, false, {{"max_components", 8}}));
    c.push_back(make_spec(11, "pairwise_products", Family::FeatureEngineering, Algo::PairwiseProducts,
                          false, false, false, {{"max_pairs", 10}}));
    c.push_back(make_spec(12, "random_projection", Family::FeatureEngineering, Algo::RandomProjection,
                          false, false, false, {{"max_components", 8}}));
    const auto add_estimators = [&c](int first_id, Family family) {
        c.push_back(make_spec(first_id + 0, "decision_tree", family, Algo::DecisionTree,
                              false, true, false, {{"max_depth", 8}}));
        c.push_back(make_spec(first_id + 1, "random_forest", family, Algo::RandomForest,
                              false, true, false, {{"trees", 20}, {"max_depth", 8}}));
        c.push_back(make_spec(first_id + 2, "knn", family, Algo::Knn,
                              false, false, false, {{"k", 5}}));
        c.push_back(make_spec(first_id + 3, "naive_bayes", family, Algo::NaiveBayes,
                              false, true, false, {{"laplace", 1}}));
        c.push_back(make_spec(first_id + 4, "logistic_regression", family, Algo::LogisticRegression,
                              false, false, false, {{"epochs", 400}, {"lr", 0.1}, {"l2", 1e-4}}));
    };
    add_estimators(13, Family::Estimator);
    add_estimators(18, Family::Combiner);
    return c;
}

}  // namespace

const std::vector<PrimitiveSpec>& catalog() {
    static const std::vector<PrimitiveSpec> c = build_catalog();
    return c;
}

const PrimitiveSpec& primitive_by_id(int id) {
    const auto& c = catalog();
    if (id < 1 || id > static_cast<int>(c.size())) {
        throw UsageError("primitive id " + std::to_string(id) + " out of range");
    }
    return c[static_cast<std::size_t>(id - 1)];
}

std::string catalog_to_json() {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : catalog()) {
        nlohmann::json hp = nlohmann::json::object();
        for (const auto& [k, v] : p.hyperparameters) hp[k] = v;
        arr.push_back({{"id", p.id},
                       {"name", p.name},
                       {"family", static_cast<int>(p.family)},
                       {"handles_missing", p.handles_missing},
                       {"handles_categorical", p.handles_categorical},
                       {"requires_nonnegative", p.requires_nonnegative},
                       {"hyperparameters", hp}});
    }
    return arr.dump(2);
}

std::uint64_t catalog_hash() { return fnv1a64(catalog_to_json()); }

bool can_accept(const PrimitiveSpec& p, const TableSummary& merged) {
    if (merged.features.empty()) return false;
    if (merged.any_missing() && !p.handles_missing) return false;
    if (merged.any_categorical() && !p.handles_categorical) return false;
    if (merged.any_negative() && p.requires_nonnegative) return false;
    return true;
}

bool can_accept(const PrimitiveSpec& p, const Table& merged) {
    return can_accept(p, summarize(merged));
}

Table merge_inputs(std::span<const Table* const> inputs) {
    if (inputs.empty()) throw std::logic_error("merge_inputs: no inputs");
    const Table& first = *inputs[0];
    if (inputs.size() == 1) return first;

    std::vector<Column> columns = first.columns();
    std::unordered_set<std::string> seen;
    for (const auto& c : columns) seen.insert(c.lineage);
    for (std::size_t i = 1; i < inputs.size(); ++i) {
        const Table& t = *inputs[i];
        if (t.n_rows() != first.n_rows()) {
            throw std::logic_error("merge_inputs: row count mismatch");
        }
        for (int j : t.feature_indices()) {
            const Column& c = t.col(j);
            if (seen.insert(c.lineage).second) columns.push_back(c);
        }
    }
    return Table(std::move(columns), first.target_index());
}

// ---------------------------------------------------------------------------
// Learned state
// ---------------------------------------------------------------------------

namespace {

struct TreeNode {
    int feature = -1;  // -1: leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> dist;  // leaf class distribution
};

struct DecisionTreeModel {
    std::vector<TreeNode> nodes;
};

struct NaiveBayesModel {
    std::vector<double> log_prior;                          // per class
    std::vector<std::vector<std::pair<double, double>>> gauss;  // [feature][class] mean,var
    std::vector<std::vector<std::vector<double>>> cat_loglik;   // [feature][class][level+unseen]
};

struct LogRegModel {
    int n_classes = 0;
    int n_features = 0;
    std::vector<double> weights;  // C x (m+1), row-major, last column is bias
    std::vector<double> mu, sd;   // internal standardization
};

}  // namespace

class PrimitiveState {
public:
    Algo algo = Algo::ImputeMeanMode;
    bool identity = false;
    std::string prov;

    // transformers
    std::vector<double> num_a, num_b;                 // per-feature scalars (mean / lo / width ...)
    std::vector<std::string> cat_fill;                // imputer modes
    std::vector<std::vector<std::string>> levels;     // one-hot / estimator category levels
    std::vector<int> keep;                            // selector projection
    std::vector<double> col_mean;                     // pca centering
    std::vector<double> proj;                         // projection matrix m x k, row-major
    int proj_k = 0;
    std::vector<std::pair<int, int>> pairs;           // interaction pairs
    int bins = 0;

    // estimators
    std::vector<std::string> classes;
    std::vector<DecisionTreeModel> trees;             // 1 for tree, many for forest
    std::vector<std::vector<double>> knn_x;
    std::vector<int> knn_y;
    int knn_k = 5;
    NaiveBayesModel nb;
    LogRegModel logreg;
};

namespace {

std::vector<const Column*> feature_columns(const Table& t) {
    std::vector<const Column*> out;
    for (int i : t.feature_indices()) out.push_back(&t.col(i));
    return out;
}

std::vector<std::string> sorted_levels(const Column& c) {
    std::set<std::string> s;
    for (std::size_t i = 0; i < c.labels.size(); ++i) {
        if (!c.missing[i]) s.insert(c.labels[i]);
    }
    return {s.begin(), s.end()};
}

void check_signature(const FittedPrimitive& fp, const std::vector<const Column*>& feats) {
    if (feats.size() != fp.signature.size()) {
        throw DataError("apply: schema mismatch (feature count)");
    }
    for (std::size_t i = 0; i < feats.size(); ++i) {
        if (feats[i]->lineage != fp.signature[i].first ||
            feats[i]->kind != fp.signature[i].second) {
            throw DataError("apply: schema mismatch at column '" + feats[i]->name + "'");
        }
    }
}

int selector_keep_count(int m) { return std::max(1, (m + 1) / 2); }

// --------------------------- estimator helpers ----------------------------

// Dense numeric encoding: numeric columns pass through, categorical columns
// map to the fit-time level index (unseen levels -> -1).
std::vector<std::vector<double>> encode_features(const PrimitiveState& st,
                                                 const std::vector<const Column*>& feats,
                                                 int n_rows) {
    std::vector<std::vector<double>> x(static_cast<std::size_t>(n_rows),
                                       std::vector<double>(feats.size(), 0.0));
    for (std::size_t j = 0; j < feats.size(); ++j) {
        const Column& c = *feats[j];
        if (c.kind == ColumnKind::Numeric) {
            for (int r = 0; r < n_rows; ++r) x[static_cast<std::size_t>(r)][j] = c.numeric[static_cast<std::size_t>(r)];
        } else {
            std::unordered_map<std::string, int> index;
            const auto& lv = st.levels[j];
            for (int i = 0; i < static_cast<int>(lv.size()); ++i) index[lv[static_cast<std::size_t>(i)]] = i;
            for (int r = 0; r < n_rows; ++r) {
                auto it = index.find(c.labels[static_cast<std::size_t>(r)]);
                x[static_cast<std::size_t>(r)][j] = it == index.end() ? -1.0 : static_cast<double>(it->second);
            }
        }
    }
    return x;
}

double gini(const std::vector<int>& counts, int total) {
    if (total == 0) return 0.0;
    double g = 1.0;
    for (int c : counts) {
        const double p = static_cast<double>(c) / total;
        g -= p * p;
    }
    return g;
}

void build_tree(DecisionTreeModel& model, const std::vector<std::vector<double>>& x,
                const std::vector<int>& y, int n_classes,
                const std::vector<int>& feature_subset, std::vector<int> rows, int depth,
                int max_depth, int node_index) {
    std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
    for (int r : rows) ++counts[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])];
    const int total = static_cast<int>(rows.size());

    TreeNode& node = model.nodes[static_cast<std::size_t>(node_index)];
    node.dist.assign(static_cast<std::size_t>(n_classes), 0.0);
    for (int c = 0; c < n_classes; ++c) {
        node.dist[static_cast<std::size_t>(c)] = total > 0 ? static_cast<double>(counts[static_cast<std::size_t>(c)]) / total : 0.0;
    }

    const double parent_gini = gini(counts, total);
    if (depth >= max_depth || total < 2 || parent_gini <= 0.0) return;

    double best_gain = 1e-12;
    int best_f = -1;
    double best_thr = 0.0;
    std::vector<std::pair<double, int>> vals;
    for (int f : feature_subset) {
        vals.clear();
        vals.reserve(rows.size());
        for (int r : rows) vals.emplace_back(x[static_cast<std::size_t>(r)][static_cast<std::size_t>(f)], y[static_cast<std::size_t>(r)]);
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<int> left(static_cast<std::size_t>(n_classes), 0);
        int n_left = 0;
        for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
            ++left[static_cast<std::size_t>(vals[i].second)];
            ++n_left;
            if (vals[i].first == vals[i + 1].first) continue;
            std::vector<int> right(static_cast<std::size_t>(n_classes), 0);
            for (int c = 0; c < n_classes; ++c) right[static_cast<std::size_t>(c)] = counts[static_cast<std::size_t>(c)] - left[static_cast<std::size_t>(c)];
            const int n_right = total - n_left;
            const double child = (n_left * gini(left, n_left) + n_right * gini(right, n_right)) / total;
            const double gain = parent_gini - child;
            if (gain > best_gain + 1e-12) {
                best_gain = gain;
                best_f = f;
                best_thr = vals[i].first / 2.0 + vals[i + 1].first / 2.0;
            }
        }
    }
    if (best_f < 0) return;

    std::vector<int> left_rows, right_rows;
    for (int r : rows) {
        (x[static_cast<std::size_t>(r)][static_cast<std::size_t>(best_f)] <= best_thr ? left_rows : right_rows).push_back(r);
    }
    if (left_rows.empty() || right_rows.empty()) return;

    const int left_index = static_cast<int>(model.nodes.size());
    const int right_index = left_index + 1;
    model.nodes.emplace_back();
    model.nodes.emplace_back();
    // re-reference: emplace_back may have reallocated the node storage
    TreeNode& parent = model.nodes[static_cast<std::size_t>(node_index)];
    parent.feature = best_f;
    parent.threshold = best_thr;
    parent.left = left_index;
    parent.right = right_index;
    build_tree(model, x, y, n_classes, feature_subset, std::move(left_rows), depth + 1,
               max_depth, left_index);
    build_tree(model, x, y, n_classes, feature_subset, std::move(right_rows), depth + 1,
               max_depth, right_index);
}

DecisionTreeModel fit_tree(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                           int n_classes, const std::vector<int>& feature_subset, int max_depth,
                           const std::vector<int>& rows) {
    DecisionTreeModel model;
    model.nodes.emplace_back();
    build_tree(model, x, y, n_classes, feature_subset, rows, 0, max_depth, 0);
    return model;
}

const std::vector<double>& tree_predict(const DecisionTreeModel& model,
                                        const std::vector<double>& row) {
    int i = 0;
    while (model.nodes[static_cast<std::size_t>(i)].feature >= 0) {
        const TreeNode& n = model.nodes[static_cast<std::size_t>(i)];
        i = row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return model.nodes[static_cast<std::size_t>(i)].dist;
}

}  // namespace

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

namespace {

void fit_transformer(PrimitiveState& st, const PrimitiveSpec& p, const Table& input,
                     std::uint64_t seed) {
    const auto feats = feature_columns(input);
    const int m = static_cast<int>(feats.size());
    const int n = input.n_rows();

    switch (p.algo) {
        case Algo::ImputeMeanMode: {
            st.num_a.resize(static_cast<std::size_t>(m), 0.0);
            st.cat_fill.resize(static_cast<std::size_t>(m));
            for (int j = 0; j < m; ++j) {
                const Column& c = *feats[static_cast<std::size_t>(j)];
                if (c.kind == ColumnKind::Numeric) {
                    double sum = 0.0;
                    int cnt = 0;
                    for (int r = 0; r < n; ++r) {
                        if (!c.missing[static_cast<std::size_t>(r)]) {
                            sum += c.numeric[static_cast<std::size_t>(r)];
                            ++cnt;
                        }
                    }
                    st.num_a[static_cast<std::size_t>(j)] = cnt > 0 ? sum / cnt : 0.0;
                } else {
                    std::map<std::string, int> counts;
                    for (int r = 0; r < n; ++r) {
                        if (!c.missing[static_cast<std::size_t>(r)]) ++counts[c.labels[static_cast<std::size_t>(r)]];
                    }
                    std::string mode = "unknown";
                    int best = 0;
                    for (const auto& [lvl, cnt] : counts) {
                        if (cnt > best) {  // map order makes ties lexicographic-smallest
                            best = cnt;
                            mode = lvl;
                        }
                    }
                    st.cat_fill[static_cast<std::size_t>(j)] = mode;
                }
            }
            break;
        }
        case Algo::OneHot: {
            st.levels.resize(static_cast<std::size_t>(m));
            for (int j = 0; j < m; ++j) {
                const Column& c = *feats[static_cast<std::size_t>(j)];
                if (c.kind == ColumnKind::Categorical) st.levels[static_cast<std::size_t>(j)] = sorted_levels(c);
            }
            break;
        }
        case Algo::DropConstant: {
            for (int j = 0; j < m; ++j) {
                const Column& c = *feats[static_cast<std::size_t>(j)];
                bool constant = true;
                if (c.kind == ColumnKind::Numeric) {
                    double v0 = 0.0;
                    bool seen = false;
                    for (int r = 0; r < n && constant; ++r) {
                        if (c.missing[static_cast<std::size_t>(r)]) continue;
                        if (!seen) {
                            v0 = c.numeric[static_cast<std::size_t>(r)];
                            seen = true;
                        } else if (c.numeric[static_cast<std::size_t>(r)] != v0) {
                            constant = false;
                        }
                    }
                } else {
                    const std::string* v0 = nullptr;
                    for (int r = 0; r < n && constant; ++r) {
                        if (c.missing[static_cast<std::size_t>(r)]) continue;
                        if (!v0) {
                            v0 = &c.labels[static_cast<std::size_t>(r)];
                        } else if (c.labels[static_cast<std::size_t>(r)] != *v0) {
                            constant = false;
                        }
                    }
                }
                if (!constant) st.keep.push_back(j);
            }
            if (st.keep.empty()) st.keep.push_back(0);  // never drop to zero features
            break;
        }
        case Algo::MinMaxScale: {
            st.num_a.resize(static_cast<std::size_t>(m), 0.0);  // min
            st.num_b.resize(static_cast<std::size_t>(m), 0.0);  // max
            for (int j = 0; j < m; ++j) {
                const Column& c = *feats[static_cast<std::size_t>(j)];
                double lo = c.numeric.empty() ? 0.0 : c.numeric[0];
                double hi = lo;
                for (int r = 0; r < n; ++r) {
                    lo = std::min(lo, c.numeric[static_cast<std::size_t>(r)]);
                    hi = std::max(hi, c.numeric[static_cast<std::size_t>(r)]);
                }
                st.num_a[static_cast<std::size_t>(j)] = lo;
                st.num_b[static_cast<std::size_t>(j)] = hi;
            }
            break;
        }
        case Algo::Standardize: {
            st.num_a.resize(static_cast<std::size_t>(m), 0.0);  // mean
            st.num_b.resize(static_cast<std::size_t>(m), 0.0);  // std
            const TableSummary ts = summarize(input);
            for (int j = 0; j < m; ++j) {
                st.num_a[static_cast<std::size_t>(j)] = ts.features[static_cast<std::size_t>(j)].mean;
                st.num_b[static_cast<std::size_t>(j)] = ts.features[static_cast<std::size_t>(j)].stddev;
            }
            break;
        }
        case Algo::Discretize: {
            st.bins = static_cast<int>(p.hyperparameters.at("bins"));
            st.num_a.resize(static_cast<std::size_t>(m), 0.0);  // lo
            st.num_b.resize(static_cast<std::size_t>(m), 0.0);  // width
            for (int j = 0; j < m; ++j) {
                const Column& c = *feats[static_cast<std::size_t>(j)];
                double lo = c.numeric.empty() ? 0.0 : c.numeric[0];
                double hi = lo;
                for (int r = 0; r < n; ++r) {
                    lo = std::min(lo, c.numeric[static_cast<std::size_t>(r)]);
                    hi = std::max(hi, c.numeric[static_cast<std::size_t>(r)]);
                }
                st.num_a[static_cast<std::size_t>(j)] = lo;
                st.num_b[static_cast<std::size_t>(j)] = (hi - lo) / st.bins;
            }
            break;
        }
        case Algo::SelectVariance: {
            std::vector<std::pair<double, int>> scored;
            const TableSummary ts = summarize(input);
            for (int j = 0; j < m; ++j) {
                const auto& s = ts.features[static_cast<std::size_t>(j)];
                const double var = s.kind == ColumnKind::Numeric ? s.stddev * s.stddev : 0.0;
                scored.emplace_back(var, j);
            }
            std::stable_sort(scored.begin(), scored.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            const int kk = selector_keep_count(m);
            for (int i = 0; i < kk; ++i) st.keep.push_back(scored[static_cast<std::size_t>(i)].second);
            std::sort(st.keep.begin(), st.keep.end());
            break;
        }
        case Algo::SelectMutualInfo: {
            if (!input.target()) throw InvalidPipelineError("mutual_info: no target column");
            const auto classes = input.class_levels();
            const auto y = input.target_codes(classes);
            const int n_classes = static_cast<int>(classes.size());
            const int bins = static_cast<int>(p.hyperparameters.at("bins"));
            std::vector<std::pair<double, int>> scored;
            for (int j = 0; j < m; ++j) {
                const Column& c = *feats[static_cast<std::size_t>(j)];
                std::vector<int> xb(static_cast<std::size_t>(n), 0);
                int n_bins = 1;
                if (c.kind == ColumnKind::Numeric) {
                    double lo = c.numeric[0], hi = c.numeric[0];
                    for (int r = 0; r < n; ++r) {
                        lo = std::min(lo, c.numeric[static_cast<std::size_t>(r)]);
                        hi = std::max(hi, c.numeric[static_cast<std::size_t>(r)]);
                    }
                    const double width = (hi - lo) / bins;
                    n_bins = bins;
                    for (int r = 0; r < n; ++r) {
                        int b = width > 0.0 ? static_cast<int>((c.numeric[static_cast<std::size_t>(r)] - lo) / width) : 0;
                        xb[static_cast<std::size_t>(r)] = std::clamp(b, 0, bins - 1);
                    }
                } else {
                    const auto lv = sorted_levels(c);
                    std::unordered_map<std::string, int> index;
                    for (int i = 0; i < static_cast<int>(lv.size()); ++i) index[lv[static_cast<std::size_t>(i)]] = i;
                    n_bins = std::max(1, static_cast<int>(lv.size()));
                    for (int r = 0; r < n; ++r) xb[static_cast<std::size_t>(r)] = index[c.labels[static_cast<std::size_t>(r)]];
                }
                std::vector<double> joint(static_cast<std::size_t>(n_bins * n_classes), 0.0);
                std::vector<double> px(static_cast<std::size_t>(n_bins), 0.0), py(static_cast<std::size_t>(n_classes), 0.0);
                for (int r = 0; r < n; ++r) {
                    joint[static_cast<std::size_t>(xb[static_cast<std::size_t>(r)] * n_classes + y[static_cast<std::size_t>(r)])] += 1.0;
                    px[static_cast<std::size_t>(xb[static_cast<std::size_t>(r)])] += 1.0;
                    py[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])] += 1.0;
                }
                double mi = 0.0;
                for (int b = 0; b < n_bins; ++b) {
                    for (int cbin = 0; cbin < n_classes; ++cbin) {
                        const double pxy = joint[static_cast<std::size_t>(b * n_classes + cbin)] / n;
                        if (pxy <= 0.0) continue;
                        mi += pxy * std::log(pxy / ((px[static_cast<std::size_t>(b)] / n) * (py[static_cast<std::size_t>(cbin)] / n)));
                    }
                }
                scored.emplace_back(mi, j);
            }
            std::stable_sort(scored.begin(), scored.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            const int kk = selector_keep_count(m);
            for (int i = 0; i < kk; ++i) st.keep.push_back(scored[static_cast<std::size_t>(i)].second);
            std::sort(st.keep.begin(), st.keep.end());
            break;
        }
        case Algo::SelectChi2: {
            if (!input.target()) throw InvalidPipelineError("chi2: no target column");
            const auto classes = input.class_levels();
            const auto y = input.target_codes(classes);
            const int n_classes = static_cast<int>(classes.size());
            std::vector<double> class_n(static_cast<std::size_t>(n_classes), 0.0);
            for (int r = 0; r < n; ++r) class_n[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])] += 1.0;
            std::vector<std::pair<double, int>> scored;
            for (int j = 0; j < m; ++j) {
                const Column& c = *feats[static_cast<std::size_t>(j)];
                std::vector<double> observed(static_cast<std::size_t>(n_classes), 0.0);
                double total = 0.0;
                for (int r = 0; r < n; ++r) {
                    observed[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])] += c.numeric[static_cast<std::size_t>(r)];
                    total += c.numeric[static_cast<std::size_t>(r)];
                }
                double chi2 = 0.0;
                for (int cls = 0; cls < n_classes; ++cls) {
                    const double expected = total * class_n[static_cast<std::size_t>(cls)] / n;
                    if (expected > 0.0) {
                        const double d = observed[static_cast<std::size_t>(cls)] - expected;
                        chi2 += d * d / expected;
                    }
                }
                scored.emplace_back(chi2, j);
            }
            std::stable_sort(scored.begin(), scored.end(),
                             [](const auto& a, const auto& b) { return a.first > b.first; });
            const int kk = selector_keep_count(m);
            for (int i = 0; i < kk; ++i) st.keep.push_back(scored[static_cast<std::size_t>(i)].second);
            std::sort(st.keep.begin(), st.keep.end());
            break;
        }
        case Algo::PcaProject: {
            const int k = std::min(static_cast<int>(p.hyperparameters.at("max_components")), m);
            Eigen::MatrixXd x(n, m);
            for (int j = 0; j < m; ++j) {
                for (int r = 0; r < n; ++r) x(r, j) = feats[static_cast<std::size_t>(j)]->numeric[static_cast<std::size_t>(r)];
            }
            Eigen::RowVectorXd mean = x.colwise().mean();
            x.rowwise() -= mean;
            Eigen::MatrixXd cov = (x.transpose() * x) / n;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
            if (solver.info() != Eigen::Success) {
                throw std::runtime_error("pca: eigendecomposition failed");
            }
            st.col_mean.assign(mean.data(), mean.data() + m);
            st.proj_k = k;
            st.proj.resize(static_cast<std::size_t>(m) * k);
            for (int comp = 0; comp < k; ++comp) {
                Eigen::VectorXd v = solver.eigenvectors().col(m - 1 - comp);  // descending eigenvalue
                int arg = 0;
                for (int i = 1; i < m; ++i) {
                    if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
                }
                if (v(arg) < 0.0) v = -v;  // pin component sign
                for (int i = 0; i < m; ++i) st.proj[static_cast<std::size_t>(i * k + comp)] = v(i);
            }
            break;
        }
        case Algo::PairwiseProducts: {
            const int cap = static_cast<int>(p.hyperparameters.at("max_pairs"));
            for (int i = 0; i < m && static_cast<int>(st.pairs.size()) < cap; ++i) {
                for (int j = i + 1; j < m && static_cast<int>(st.pairs.size()) < cap; ++j) {
                    st.pairs.emplace_back(i, j);
                }
            }
            break;
        }
        case Algo::RandomProjection: {
            const int k = std::min(static_cast<int>(p.hyperparameters.at("max_components")), m);
            Rng rng(hash_combine(seed, fnv1a64("random_projection")));
            st.proj_k = k;
            st.proj.resize(static_cast<std::size_t>(m) * k);
            const double scale = 1.0 / std::sqrt(static_cast<double>(k));
            for (std::size_t i = 0; i < st.proj.size(); ++i) st.proj[i] = rng.normal() * scale;
            break;
        }
        default:
            throw std::logic_error("fit_transformer: not a transformer");
    }
}

void fit_estimator(PrimitiveState& st, const PrimitiveSpec& p, const Table& input,
                   std::uint64_t seed) {
    if (!input.target()) throw InvalidPipelineError(p.name + ": no target column");
    const auto feats = feature_columns(input);
    const int m = static_cast<int>(feats.size());
    const int n = input.n_rows();
    st.classes = input.class_levels();
    const int n_classes = static_cast<int>(st.classes.size());
    if (n_classes < 1) throw InvalidPipelineError(p.name + ": no classes in target");
    const auto y = input.target_codes(st.classes);

    st.levels.resize(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        if (feats[static_cast<std::size_t>(j)]->kind == ColumnKind::Categorical) {
            st.levels[static_cast<std::size_t>(j)] = sorted_levels(*feats[static_cast<std::size_t>(j)]);
        }
    }
    const auto x = encode_features(st, feats, n);

    std::vector<int> all_rows(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) all_rows[static_cast<std::size_t>(r)] = r;
    std::vector<int> all_features(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) all_features[static_cast<std::size_t>(j)] = j;

    switch (p.algo) {
        case Algo::DecisionTree: {
            const int depth = static_cast<int>(p.hyperparameters.at("max_depth"));
            st.trees.push_back(fit_tree(x, y, n_classes, all_features, depth, all_rows));
            break;
        }
        case Algo::RandomForest: {
            const int depth = static_cast<int>(p.hyperparameters.at("max_depth"));
            const int n_trees = static_cast<int>(p.hyperparameters.at("trees"));
            const int q = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m)))));
            Rng rng(hash_combine(seed, fnv1a64("random_forest")));
            for (int t = 0; t < n_trees; ++t) {
                std::vector<int> rows(static_cast<std::size_t>(n));
                for (int r = 0; r < n; ++r) rows[static_cast<std::size_t>(r)] = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n)));
                std::vector<int> fsub = all_features;
                rng.shuffle(fsub);
                fsub.resize(static_cast<std::size_t>(std::min(q, m)));
                std::sort(fsub.begin(), fsub.end());
                st.trees.push_back(fit_tree(x, y, n_classes, fsub, depth, rows));
            }
            break;
        }
        case Algo::Knn: {
            st.knn_k = static_cast<int>(p.hyperparameters.at("k"));
            st.knn_x = x;
            st.knn_y = y;
            break;
        }
        case Algo::NaiveBayes: {
            st.nb.log_prior.resize(static_cast<std::size_t>(n_classes));
            std::vector<int> class_n(static_cast<std::size_t>(n_classes), 0);
            for (int r = 0; r < n; ++r) ++class_n[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])];
            for (int c = 0; c < n_classes; ++c) {
                st.nb.log_prior[static_cast<std::size_t>(c)] = std::log(static_cast<double>(class_n[static_cast<std::size_t>(c)]) / n);
            }
            st.nb.gauss.assign(static_cast<std::size_t>(m), {});
            st.nb.cat_loglik.assign(static_cast<std::size_t>(m), {});
            for (int j = 0; j < m; ++j) {
                if (feats[static_cast<std::size_t>(j)]->kind == ColumnKind::Numeric) {
                    auto& g = st.nb.gauss[static_cast<std::size_t>(j)];
                    g.assign(static_cast<std::size_t>(n_classes), {0.0, 0.0});
                    for (int r = 0; r < n; ++r) g[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])].first += x[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
                    for (int c = 0; c < n_classes; ++c) {
                        if (class_n[static_cast<std::size_t>(c)] > 0) g[static_cast<std::size_t>(c)].first /= class_n[static_cast<std::size_t>(c)];
                    }
                    for (int r = 0; r < n; ++r) {
                        const double d = x[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] - g[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])].first;
                        g[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])].second += d * d;
                    }
                    for (int c = 0; c < n_classes; ++c) {
                        g[static_cast<std::size_t>(c)].second =
                            class_n[static_cast<std::size_t>(c)] > 0 ? g[static_cast<std::size_t>(c)].second / class_n[static_cast<std::size_t>(c)] + 1e-9 : 1.0;
                    }
                } else {
                    const int n_levels = static_cast<int>(st.levels[static_cast<std::size_t>(j)].size());
                    auto& table = st.nb.cat_loglik[static_cast<std::size_t>(j)];
                    table.assign(static_cast<std::size_t>(n_classes),
                                 std::vector<double>(static_cast<std::size_t>(n_levels + 1), 0.0));
                    for (int r = 0; r < n; ++r) {
                        const int lvl = static_cast<int>(x[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)]);
                        table[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])][static_cast<std::size_t>(lvl < 0 ? n_levels : lvl)] += 1.0;
                    }
                    for (int c = 0; c < n_classes; ++c) {
                        for (int l = 0; l <= n_levels; ++l) {
                            // Laplace smoothing with one extra "unseen" bucket.
                            table[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)] = std::log(
                                (table[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)] + 1.0) /
                                (class_n[static_cast<std::size_t>(c)] + n_levels + 1.0));
                        }
                    }
                }
            }
            break;
        }
        case Algo::LogisticRegression: {
            auto& lr = st.logreg;
            lr.n_classes = n_classes;
            lr.n_features = m;
            lr.mu.assign(static_cast<std::size_t>(m), 0.0);
            lr.sd.assign(static_cast<std::size_t>(m), 1.0);
            for (int j = 0; j < m; ++j) {
                double sum = 0.0;
                for (int r = 0; r < n; ++r) sum += x[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)];
                lr.mu[static_cast<std::size_t>(j)] = sum / n;
                double sq = 0.0;
                for (int r = 0; r < n; ++r) {
                    const double d = x[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] - lr.mu[static_cast<std::size_t>(j)];
                    sq += d * d;
                }
                const double sd = std::sqrt(sq / n);
                lr.sd[static_cast<std::size_t>(j)] = sd > 0.0 ? sd : 1.0;
            }
            Eigen::MatrixXd z(n, m + 1);
            for (int r = 0; r < n; ++r) {
                for (int j = 0; j < m; ++j) {
                    z(r, j) = (x[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] - lr.mu[static_cast<std::size_t>(j)]) / lr.sd[static_cast<std::size_t>(j)];
                }
                z(r, m) = 1.0;
            }
            Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n_classes, m + 1);
            Eigen::MatrixXd target = Eigen::MatrixXd::Zero(n, n_classes);
            for (int r = 0; r < n; ++r) target(r, y[static_cast<std::size_t>(r)]) = 1.0;
            const int epochs = static_cast<int>(p.hyperparameters.at("epochs"));
            const double lrate = p.hyperparameters.at("lr");
            const double l2 = p.hyperparameters.at("l2");
            for (int e = 0; e < epochs; ++e) {
                Eigen::MatrixXd logits = z * w.transpose();              // n x C
                Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
                logits.colwise() -= rowmax;
                Eigen::MatrixXd expd = logits.array().exp().matrix();
                Eigen::VectorXd denom = expd.rowwise().sum();
                Eigen::MatrixXd prob = expd.array().colwise() / denom.array();
                Eigen::MatrixXd grad = (prob - target).transpose() * z / n;
                grad.leftCols(m) += l2 * w.leftCols(m);
                w -= lrate * grad;
            }
            lr.weights.assign(w.data(), w.data() + w.size());  // column-major Eigen layout
            break;
        }
        default:
            throw std::logic_error("fit_estimator: not an estimator");
    }
}

std::vector<double> estimator_distribution(const PrimitiveState& st,
                                           const std::vector<double>& row) {
    const int n_classes = static_cast<int>(st.classes.size());
    std::vector<double> dist(static_cast<std::size_t>(n_classes), 0.0);
    switch (st.algo) {
        case Algo::DecisionTree: {
            return tree_predict(st.trees[0], row);
        }
        case Algo::RandomForest: {
            for (const auto& t : st.trees) {
                const auto& d = tree_predict(t, row);
                for (int c = 0; c < n_classes; ++c) dist[static_cast<std::size_t>(c)] += d[static_cast<std::size_t>(c)];
            }
            for (auto& v : dist) v /= static_cast<double>(st.trees.size());
            return dist;
        }
        case Algo::Knn: {
            const int n = static_cast<int>(st.knn_x.size());
            const int k = std::min(st.knn_k, n);
            std::vector<std::pair<double, int>> d(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < row.size(); ++j) {
                    const double diff = st.knn_x[static_cast<std::size_t>(i)][j] - row[j];
                    s += diff * diff;
                }
                d[static_cast<std::size_t>(i)] = {s, i};
            }
            std::stable_sort(d.begin(), d.end());
            for (int i = 0; i < k; ++i) dist[static_cast<std::size_t>(st.knn_y[static_cast<std::size_t>(d[static_cast<std::size_t>(i)].second)])] += 1.0;
            for (auto& v : dist) v /= k;
            return dist;
        }
        case Algo::NaiveBayes: {
            std::vector<double> logp = st.nb.log_prior;
            for (std::size_t j = 0; j < row.size(); ++j) {
                if (!st.nb.gauss[j].empty()) {
                    for (int c = 0; c < n_classes; ++c) {
                        const auto [mu, var] = st.nb.gauss[j][static_cast<std::size_t>(c)];
                        const double d = row[j] - mu;
                        logp[static_cast<std::size_t>(c)] +=
                            -0.5 * std::log(2.0 * 3.14159265358979323846 * var) - d * d / (2.0 * var);
                    }
                } else {
                    const int n_levels = static_cast<int>(st.nb.cat_loglik[j][0].size()) - 1;
                    int lvl = static_cast<int>(row[j]);
                    if (lvl < 0 || lvl >= n_levels) lvl = n_levels;  // unseen bucket
                    for (int c = 0; c < n_classes; ++c) {
                        logp[static_cast<std::size_t>(c)] += st.nb.cat_loglik[j][static_cast<std::size_t>(c)][static_cast<std::size_t>(lvl)];
                    }
                }
            }
            const double mx = *std::max_element(logp.begin(), logp.end());
            double denom = 0.0;
            for (int c = 0; c < n_classes; ++c) {
                dist[static_cast<std::size_t>(c)] = std::exp(logp[static_cast<std::size_t>(c)] - mx);
                denom += dist[static_cast<std::size_t>(c)];
            }
            for (auto& v : dist) v /= denom;
            return dist;
        }
        case Algo::LogisticRegression: {
            const auto& lr = st.logreg;
            const int m = lr.n_features;
            std::vector<double> logits(static_cast<std::size_t>(n_classes), 0.0);
            for (int c = 0; c < n_classes; ++c) {
                double s = lr.weights[static_cast<std::size_t>(c + m * n_classes)];  // bias column
                for (int j = 0; j < m; ++j) {
                    const double zj = (row[static_cast<std::size_t>(j)] - lr.mu[static_cast<std::size_t>(j)]) / lr.sd[static_cast<std::size_t>(j)];
                    s += lr.weights[static_cast<std::size_t>(c + j * n_classes)] * zj;
                }
                logits[static_cast<std::size_t>(c)] = s;
            }
            const double mx = *std::max_element(logits.begin(), logits.end());
            double denom = 0.0;
            for (int c = 0; c < n_classes; ++c) {
                dist[static_cast<std::size_t>(c)] = std::exp(logits[static_cast<std::size_t>(c)] - mx);
                denom += dist[static_cast<std::size_t>(c)];
            }
            for (auto& v : dist) v /= denom;
            return dist;
        }
        default:
            throw std::logic_error("estimator_distribution: not an estimator");
    }
}

// --------------------------- apply (transform) ----------------------------

Table apply_transformer(const FittedPrimitive& fp, const Table& input) {
    const PrimitiveState& st = *fp.state;
    const auto feat_idx = input.feature_indices();
    const int n = input.n_rows();

    if (st.identity) return input;

    std::vector<Column> out;
    const auto target_idx = input.target_index();
    // the target's position in `out` (column counts may shift around it)
    std::optional<int> out_target;
    const auto push_target = [&out, &out_target](const Column& c) {
        out_target = static_cast<int>(out.size());
        out.push_back(c);
    };

    switch (st.algo) {
        case Algo::ImputeMeanMode: {
            for (int i = 0; i < input.n_cols(); ++i) {
                Column c = input.col(i);
                if (target_idx && *target_idx == i) {
                    push_target(c);
                    continue;
                }
                const int j = static_cast<int>(std::find(feat_idx.begin(), feat_idx.end(), i) - feat_idx.begin());
                if (c.kind == ColumnKind::Numeric) {
                    for (int r = 0; r < n; ++r) {
                        if (c.missing[static_cast<std::size_t>(r)]) c.numeric[static_cast<std::size_t>(r)] = st.num_a[static_cast<std::size_t>(j)];
                    }
                } else {
                    for (int r = 0; r < n; ++r) {
                        if (c.missing[static_cast<std::size_t>(r)]) c.labels[static_cast<std::size_t>(r)] = st.cat_fill[static_cast<std::size_t>(j)];
                    }
                }
                std::fill(c.missing.begin(), c.missing.end(), 0);
                c.lineage += "|imp";
                out.push_back(std::move(c));
            }
            break;
        }
        case Algo::OneHot: {
            for (int i = 0; i < input.n_cols(); ++i) {
                const Column& c = input.col(i);
                if (target_idx && *target_idx == i) {
                    push_target(c);
                    continue;
                }
                if (c.kind == ColumnKind::Numeric) {
                    out.push_back(c);
                    continue;
                }
                const int j = static_cast<int>(std::find(feat_idx.begin(), feat_idx.end(), i) - feat_idx.begin());
                for (const auto& level : st.levels[static_cast<std::size_t>(j)]) {
                    std::vector<double> vals(static_cast<std::size_t>(n), 0.0);
                    for (int r = 0; r < n; ++r) {
                        if (!c.missing[static_cast<std::size_t>(r)] && c.labels[static_cast<std::size_t>(r)] == level) vals[static_cast<std::size_t>(r)] = 1.0;
                    }
                    out.push_back(Column::make_numeric(c.name + "=" + level,
                                                       c.lineage + "|oh=" + level, std::move(vals)));
                }
            }
            break;
        }
        case Algo::DropConstant:
        case Algo::SelectVariance:
        case Algo::SelectMutualInfo:
        case Algo::SelectChi2: {
            std::unordered_set<int> keep_feature;
            for (int j : st.keep) keep_feature.insert(feat_idx[static_cast<std::size_t>(j)]);
            for (int i = 0; i < input.n_cols(); ++i) {
                if (target_idx && *target_idx == i) {
                    push_target(input.col(i));
                } else if (keep_feature.count(i)) {
                    out.push_back(input.col(i));
                }
            }
            break;
        }
        case Algo::MinMaxScale: {
            for (int i = 0; i < input.n_cols(); ++i) {
                Column c = input.col(i);
                if (target_idx && *target_idx == i) {
                    push_target(c);
                    continue;
                }
                if (c.kind != ColumnKind::Numeric) {
                    out.push_back(std::move(c));
                    continue;
                }
                const int j = static_cast<int>(std::find(feat_idx.begin(), feat_idx.end(), i) - feat_idx.begin());
                const double lo = st.num_a[static_cast<std::size_t>(j)];
                const double range = st.num_b[static_cast<std::size_t>(j)] - lo;
                for (int r = 0; r < n; ++r) {
                    c.numeric[static_cast<std::size_t>(r)] = range > 0.0 ? (c.numeric[static_cast<std::size_t>(r)] - lo) / range : 0.0;
                }
                c.lineage += "|mms";
                out.push_back(std::move(c));
            }
            break;
        }
        case Algo::Standardize: {
            for (int i = 0; i < input.n_cols(); ++i) {
                Column c = input.col(i);
                if (target_idx && *target_idx == i) {
                    push_target(c);
                    continue;
                }
                if (c.kind != ColumnKind::Numeric) {
                    out.push_back(std::move(c));
                    continue;
                }
                const int j = static_cast<int>(std::find(feat_idx.begin(), feat_idx.end(), i) - feat_idx.begin());
                const double mean = st.num_a[static_cast<std::size_t>(j)];
                const double sd = st.num_b[static_cast<std::size_t>(j)];
                for (int r = 0; r < n; ++r) {
                    c.numeric[static_cast<std::size_t>(r)] = sd > 0.0 ? (c.numeric[static_cast<std::size_t>(r)] - mean) / sd : 0.0;
                }
                c.lineage += "|std";
                out.push_back(std::move(c));
            }
            break;
        }
        case Algo::Discretize: {
            for (int i = 0; i < input.n_cols(); ++i) {
                Column c = input.col(i);
                if (target_idx && *target_idx == i) {
                    push_target(c);
                    continue;
                }
                if (c.kind != ColumnKind::Numeric) {
                    out.push_back(std::move(c));
                    continue;
                }
                const int j = static_cast<int>(std::find(feat_idx.begin(), feat_idx.end(), i) - feat_idx.begin());
                const double lo = st.num_a[static_cast<std::size_t>(j)];
                const double width = st.num_b[static_cast<std::size_t>(j)];
                for (int r = 0; r < n; ++r) {
                    int b = width > 0.0 ? static_cast<int>(std::floor((c.numeric[static_cast<std::size_t>(r)] - lo) / width)) : 0;
                    c.numeric[static_cast<std::size_t>(r)] = static_cast<double>(std::clamp(b, 0, st.bins - 1));
                }
                c.lineage += "|disc";
                out.push_back(std::move(c));
            }
            break;
        }
        case Algo::PcaProject:
        case Algo::RandomProjection: {
            const bool centered = st.algo == Algo::PcaProject;
            const int m = static_cast<int>(feat_idx.size());
            const char* tag = centered ? "pc" : "rp";
            for (int comp = 0; comp < st.proj_k; ++comp) {
                std::vector<double> vals(static_cast<std::size_t>(n), 0.0);
                for (int r = 0; r < n; ++r) {
                    double s = 0.0;
                    for (int j = 0; j < m; ++j) {
                        const Column& c = input.col(feat_idx[static_cast<std::size_t>(j)]);
                        double v = c.numeric[static_cast<std::size_t>(r)];
                        if (centered) v -= st.col_mean[static_cast<std::size_t>(j)];
                        s += v * st.proj[static_cast<std::size_t>(j * st.proj_k + comp)];
                    }
                    vals[static_cast<std::size_t>(r)] = s;
                }
                out.push_back(Column::make_numeric(
                    std::string(tag) + std::to_string(comp),
                    "cell" + st.prov + "/" + tag + std::to_string(comp), std::move(vals)));
            }
            if (target_idx) out.push_back(input.col(*target_idx));
            return Table(std::move(out), target_idx ? std::optional<int>(st.proj_k) : std::nullopt);
        }
        case Algo::PairwiseProducts: {
            out = input.columns();
            out_target = target_idx;  // appending products keeps positions
            for (const auto& [a, b] : st.pairs) {
                const Column& ca = input.col(feat_idx[static_cast<std::size_t>(a)]);
                const Column& cb = input.col(feat_idx[static_cast<std::size_t>(b)]);
                std::vector<double> vals(static_cast<std::size_t>(n), 0.0);
                for (int r = 0; r < n; ++r) vals[static_cast<std::size_t>(r)] = ca.numeric[static_cast<std::size_t>(r)] * cb.numeric[static_cast<std::size_t>(r)];
                out.push_back(Column::make_numeric(ca.name + "*" + cb.name,
                                                   "(" + ca.lineage + ")x(" + cb.lineage + ")",
                                                   std::move(vals)));
            }
            break;
        }
        default:
            throw std::logic_error("apply_transformer: unhandled algo");
    }
    // Generated columns can collide with pass-through copies of themselves
    // (one-hot over a table that already holds an encoding of the same
    // source column); disambiguate deterministically in column order.
    std::unordered_set<std::string> seen;
    for (auto& c : out) {
        if (seen.insert(c.lineage).second) continue;
        int k = 2;
        std::string candidate = c.lineage + "#" + std::to_string(k);
        while (!seen.insert(candidate).second) {
            candidate = c.lineage + "#" + std::to_string(++k);
        }
        c.lineage = std::move(candidate);
    }
    return Table(std::move(out), out_target);
}

Table apply_estimator(const FittedPrimitive& fp, const Table& input) {
    const PrimitiveState& st = *fp.state;
    const auto feats = feature_columns(input);
    const int n = input.n_rows();
    const int n_classes = static_cast<int>(st.classes.size());
    const auto x = encode_features(st, feats, n);

    std::vector<std::string> predicted(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> scores(static_cast<std::size_t>(n_classes),
                                            std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int r = 0; r < n; ++r) {
        const auto dist = estimator_distribution(st, x[static_cast<std::size_t>(r)]);
        int best = 0;
        for (int c = 1; c < n_classes; ++c) {
            if (dist[static_cast<std::size_t>(c)] > dist[static_cast<std::size_t>(best)]) best = c;  // ties -> lowest class index
        }
        predicted[static_cast<std::size_t>(r)] = st.classes[static_cast<std::size_t>(best)];
        for (int c = 0; c < n_classes; ++c) scores[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] = dist[static_cast<std::size_t>(c)];
    }

    std::vector<Column> out;
    out.push_back(Column::make_categorical("predict", "cellpredict/" + st.prov,
                                           std::move(predicted)));
    for (int c = 0; c < n_classes; ++c) {
        out.push_back(Column::make_numeric("score_" + st.classes[static_cast<std::size_t>(c)],
                                           "cellscore/" + st.prov + "/" + st.classes[static_cast<std::size_t>(c)],
                                           std::move(scores[static_cast<std::size_t>(c)])));
    }
    std::optional<int> target_idx;
    if (input.target_index()) {
        target_idx = static_cast<int>(out.size());
        out.push_back(input.col(*input.target_index()));
    }
    return Table(std::move(out), target_idx);
}

}  // namespace

FitResult fit_apply(const PrimitiveSpec& p, const Table& input, std::uint64_t seed,
                    const std::string& provenance) {
    FittedPrimitive fp;
    fp.spec_id = p.id;
    for (const Column* c : feature_columns(input)) {
        fp.signature.emplace_back(c->lineage, c->kind);
    }
    auto st = std::make_shared<PrimitiveState>();
    st->algo = p.algo;
    st->prov = provenance;
    if (p.is_estimator()) {
        fit_estimator(*st, p, input, seed);  // estimator failures propagate
    } else {
        try {
            fit_transformer(*st, p, input, seed);
        } catch (const std::runtime_error&) {
            // Numerical failure: keep the episode alive as a flagged identity.
            st = std::make_shared<PrimitiveState>();
            st->algo = p.algo;
            st->prov = provenance;
            st->identity = true;
            fp.fallback_identity = true;
        }
    }
    fp.state = std::move(st);
    return FitResult{fp, apply(fp, input)};
}

Table apply(const FittedPrimitive& fp, const Table& input) {
    if (!fp.state) throw std::logic_error("apply: unfitted primitive");
    check_signature(fp, feature_columns(input));
    const PrimitiveSpec& p = primitive_by_id(fp.spec_id);
    return p.is_estimator() ? apply_estimator(fp, input) : apply_transformer(fp, input);
}

}  // namespace gridpipe
