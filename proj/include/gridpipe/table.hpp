#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridpipe/common.hpp"

namespace gridpipe {

enum class ColumnKind { Numeric, Categorical };

/// One typed column with a per-cell missing mask and a provenance id.
///
/// The lineage string identifies where a column came from: "raw/<name>" for
/// loaded data, with a "|<suffix>" appended per value-changing transform
/// (e.g. "raw/age|std"), or "<cell tag>/<name>" for columns generated from
/// scratch (projections, predictions). Merging removes columns whose lineage
/// already appeared, so lineage equality means "same values by construction".
struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::Numeric;
    std::string lineage;
    std::vector<double> numeric;       // used when kind == Numeric
    std::vector<std::string> labels;   // used when kind == Categorical
    std::vector<std::uint8_t> missing;

    std::size_t size() const {
        return kind == ColumnKind::Numeric ? numeric.size() : labels.size();
    }
    bool is_missing(std::size_t i) const { return missing[i] != 0; }
    int missing_count() const;

    static Column make_numeric(std::string name, std::string lineage,
                               std::vector<double> values,
                               std::vector<std::uint8_t> missing = {});
    static Column make_categorical(std::string name, std::string lineage,
                                   std::vector<std::string> values,
                                   std::vector<std::uint8_t> missing = {});
};

/// Immutable tabular dataset. Target column, when present, holds class
/// labels (always categorical, never missing). All operations that produce
/// a Table validate the row-count / lineage-uniqueness invariants.
class Table {
public:
    Table() = default;
    Table(std::vector<Column> columns, std::optional<int> target_index);

    int n_rows() const { return n_rows_; }
    int n_cols() const { return static_cast<int>(columns_.size()); }
    const Column& col(int i) const { return columns_[static_cast<std::size_t>(i)]; }
    const std::vector<Column>& columns() const { return columns_; }

    std::optional<int> target_index() const { return target_; }
    const Column* target() const {
        return target_ ? &columns_[static_cast<std::size_t>(*target_)] : nullptr;
    }

    /// Indices of non-target columns, in table order.
    std::vector<int> feature_indices() const;
    int n_features() const;

    int find_column(const std::string& name) const;  // -1 if absent

    /// Sorted distinct target labels; the position of a label in this list
    /// is its class index (ties in votes break toward the lowest index).
    std::vector<std::string> class_levels() const;
    std::vector<int> target_codes(const std::vector<std::string>& levels) const;

    /// Row subset in the given order (indices must be valid).
    Table select_rows(std::span<const int> rows) const;

private:
    std::vector<Column> columns_;
    int n_rows_ = 0;
    std::optional<int> target_;
};

constexpr int kMetaFeatureCount = 12;
using MetaFeatures = std::array<double, kMetaFeatureCount>;

/// Per-column statistics sufficient to evaluate both CanAccept and the
/// meta-feature vector without materializing merged tables.
struct ColumnSummary {
    std::string lineage;
    ColumnKind kind = ColumnKind::Numeric;
    int missing = 0;
    double mean = 0.0;    // numeric, over non-missing cells (0 if none)
    double stddev = 0.0;  // population std over non-missing cells
    bool has_negative = false;
    int distinct_levels = 0;  // categorical, non-missing
};

struct TableSummary {
    int n_rows = 0;
    std::vector<ColumnSummary> features;  // feature columns, table order
    int n_classes = 0;
    double majority_ratio = 0.0;

    bool any_missing() const;
    bool any_categorical() const;
    bool any_negative() const;
};

TableSummary summarize(const Table& t);

/// Horizontal-merge view of several summaries: features concatenated in
/// order with lineage-duplicate columns dropped (first kept); target stats
/// from the first input. Mirrors merge_inputs exactly.
TableSummary merge_summaries(std::span<const TableSummary* const> inputs);

/// Fixed 12-entry dataset characterization:
///   0 log1p(n_rows)                 6 std of numeric-column means
///   1 log1p(n_feature_columns)      7 mean of numeric-column stds
///   2 fraction numeric features     8 number of classes
///   3 fraction categorical features 9 majority-class ratio
///   4 fraction missing cells       10 log1p(mean categorical cardinality)
///   5 mean of numeric-column means 11 fraction of features with missing
/// Counts are log(1+x)-scaled to keep magnitudes comparable; means/stds
/// ignore missing cells and all-missing numeric columns contribute 0.
MetaFeatures metafeatures(const Table& t);
MetaFeatures metafeatures_from(const TableSummary& s);

enum class Task { Classification };
enum class Metric { Accuracy };

constexpr int kTaskCount = 1;
constexpr int kMetricCount = 1;

/// A search problem: dataset plus task/metric (each maps to a fixed one-hot
/// slot in the state encoding).
struct LearningJob {
    std::string name;  // identifies the dataset in logs
    Table dataset;
    Task task = Task::Classification;
    Metric metric = Metric::Accuracy;
    MetaFeatures raw_metafeatures{};

    static LearningJob make(std::string name, Table dataset);
};

}  // namespace gridpipe
