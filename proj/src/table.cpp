#include "gridpipe/table.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace gridpipe {

int Column::missing_count() const {
    int n = 0;
    for (auto m : missing) n += m ? 1 : 0;
    return n;
}

Column Column::make_numeric(std::string name, std::string lineage,
                            std::vector<double> values,
                            std::vector<std::uint8_t> missing) {
    Column c;
    c.name = std::move(name);
    c.kind = ColumnKind::Numeric;
    c.lineage = std::move(lineage);
    c.numeric = std::move(values);
    c.missing = missing.empty() ? std::vector<std::uint8_t>(c.numeric.size(), 0)
                                : std::move(missing);
    return c;
}

Column Column::make_categorical(std::string name, std::string lineage,
                                std::vector<std::string> values,
                                std::vector<std::uint8_t> missing) {
    Column c;
    c.name = std::move(name);
    c.kind = ColumnKind::Categorical;
    c.lineage = std::move(lineage);
    c.labels = std::move(values);
    c.missing = missing.empty() ? std::vector<std::uint8_t>(c.labels.size(), 0)
                                : std::move(missing);
    return c;
}

Table::Table(std::vector<Column> columns, std::optional<int> target_index)
    : columns_(std::move(columns)), target_(target_index) {
    if (columns_.empty()) {
        if (target_) throw std::logic_error("table: target index on empty table");
        return;
    }
    n_rows_ = static_cast<int>(columns_[0].size());
    std::unordered_set<std::string> seen;
    for (const auto& c : columns_) {
        if (static_cast<int>(c.size()) != n_rows_ ||
            static_cast<int>(c.missing.size()) != n_rows_) {
            throw std::logic_error("table: column '" + c.name + "' row count mismatch");
        }
        if (!seen.insert(c.lineage).second) {
            throw DataError("table: duplicate column lineage '" + c.lineage + "'");
        }
    }
    if (target_) {
        if (*target_ < 0 || *target_ >= n_cols()) {
            throw std::logic_error("table: target index out of range");
        }
        const Column& t = columns_[static_cast<std::size_t>(*target_)];
        if (t.kind != ColumnKind::Categorical) {
            throw std::logic_error("table: target column must hold class labels");
        }
        if (t.missing_count() > 0) {
            throw DataError("table: target column '" + t.name + "' has missing values");
        }
    }
}

std::vector<int> Table::feature_indices() const {
    std::vector<int> out;
    out.reserve(columns_.size());
    for (int i = 0; i < n_cols(); ++i) {
        if (!target_ || *target_ != i) out.push_back(i);
    }
    return out;
}

int Table::n_features() const {
    return n_cols() - (target_ ? 1 : 0);
}

int Table::find_column(const std::string& name) const {
    for (int i = 0; i < n_cols(); ++i) {
        if (columns_[static_cast<std::size_t>(i)].name == name) return i;
    }
    return -1;
}

std::vector<std::string> Table::class_levels() const {
    const Column* t = target();
    if (!t) return {};
    std::vector<std::string> levels(t->labels.begin(), t->labels.end());
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    return levels;
}

std::vector<int> Table::target_codes(const std::vector<std::string>& levels) const {
    const Column* t = target();
    if (!t) return {};
    std::unordered_map<std::string, int> index;
    for (int i = 0; i < static_cast<int>(levels.size()); ++i) index[levels[static_cast<std::size_t>(i)]] = i;
    std::vector<int> codes(t->labels.size(), -1);
    for (std::size_t r = 0; r < t->labels.size(); ++r) {
        auto it = index.find(t->labels[r]);
        codes[r] = it == index.end() ? -1 : it->second;
    }
    return codes;
}

Table Table::select_rows(std::span<const int> rows) const {
    std::vector<Column> cols;
    cols.reserve(columns_.size());
    for (const auto& c : columns_) {
        Column out;
        out.name = c.name;
        out.kind = c.kind;
        out.lineage = c.lineage;
        out.missing.reserve(rows.size());
        if (c.kind == ColumnKind::Numeric) {
            out.numeric.reserve(rows.size());
            for (int r : rows) out.numeric.push_back(c.numeric[static_cast<std::size_t>(r)]);
        } else {
            out.labels.reserve(rows.size());
            for (int r : rows) out.labels.push_back(c.labels[static_cast<std::size_t>(r)]);
        }
        for (int r : rows) out.missing.push_back(c.missing[static_cast<std::size_t>(r)]);
        cols.push_back(std::move(out));
    }
    return Table(std::move(cols), target_);
}

namespace {

ColumnSummary summarize_column(const Column& c) {
    ColumnSummary s;
    s.lineage = c.lineage;
    s.kind = c.kind;
    s.missing = c.missing_count();
    if (c.kind == ColumnKind::Numeric) {
        // Two-pass mean/std over non-missing cells in row order; the same
        // code path serves materialized tables and cached summaries so the
        // resulting doubles are identical either way.
        double sum = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < c.numeric.size(); ++i) {
            if (c.missing[i]) continue;
            sum += c.numeric[i];
            if (c.numeric[i] < 0.0) s.has_negative = true;
            ++n;
        }
        if (n > 0) {
            s.mean = sum / n;
            double sq = 0.0;
            for (std::size_t i = 0; i < c.numeric.size(); ++i) {
                if (c.missing[i]) continue;
                const double d = c.numeric[i] - s.mean;
                sq += d * d;
            }
            s.stddev = std::sqrt(sq / n);
        }
    } else {
        std::unordered_set<std::string> levels;
        for (std::size_t i = 0; i < c.labels.size(); ++i) {
            if (!c.missing[i]) levels.insert(c.labels[i]);
        }
        s.distinct_levels = static_cast<int>(levels.size());
    }
    return s;
}

}  // namespace

bool TableSummary::any_missing() const {
    for (const auto& f : features)
        if (f.missing > 0) return true;
    return false;
}

bool TableSummary::any_categorical() const {
    for (const auto& f : features)
        if (f.kind == ColumnKind::Categorical) return true;
    return false;
}

bool TableSummary::any_negative() const {
    for (const auto& f : features)
        if (f.has_negative) return true;
    return false;
}

TableSummary summarize(const Table& t) {
    TableSummary s;
    s.n_rows = t.n_rows();
    for (int i : t.feature_indices()) s.features.push_back(summarize_column(t.col(i)));
    if (const Column* tgt = t.target()) {
        std::map<std::string, int> counts;
        for (const auto& l : tgt->labels) ++counts[l];
        s.n_classes = static_cast<int>(counts.size());
        int best = 0;
        for (const auto& [_, n] : counts) best = std::max(best, n);
        s.majority_ratio = t.n_rows() > 0 ? static_cast<double>(best) / t.n_rows() : 0.0;
    }
    return s;
}

TableSummary merge_summaries(std::span<const TableSummary* const> inputs) {
    if (inputs.empty()) throw std::logic_error("merge_summaries: no inputs");
    TableSummary out;
    out.n_rows = inputs[0]->n_rows;
    out.n_classes = inputs[0]->n_classes;
    out.majority_ratio = inputs[0]->majority_ratio;
    std::unordered_set<std::string> seen;
    for (const TableSummary* in : inputs) {
        if (in->n_rows != out.n_rows) {
            throw std::logic_error("merge_summaries: row count mismatch");
        }
        for (const auto& f : in->features) {
            if (seen.insert(f.lineage).second) out.features.push_back(f);
        }
    }
    return out;
}

MetaFeatures metafeatures_from(const TableSummary& s) {
    MetaFeatures m{};
    const int n_feat = static_cast<int>(s.features.size());
    m[0] = std::log1p(static_cast<double>(s.n_rows));
    m[1] = std::log1p(static_cast<double>(n_feat));
    if (n_feat > 0) {
        int n_num = 0, n_cat = 0, n_with_missing = 0;
        long missing_cells = 0;
        double mean_sum = 0.0, std_sum = 0.0, card_sum = 0.0;
        for (const auto& f : s.features) {
            if (f.kind == ColumnKind::Numeric) {
                ++n_num;
                mean_sum += f.mean;
                std_sum += f.stddev;
            } else {
                ++n_cat;
                card_sum += f.distinct_levels;
            }
            missing_cells += f.missing;
            if (f.missing > 0) ++n_with_missing;
        }
        m[2] = static_cast<double>(n_num) / n_feat;
        m[3] = static_cast<double>(n_cat) / n_feat;
        m[4] = s.n_rows > 0
                   ? static_cast<double>(missing_cells) / (static_cast<double>(s.n_rows) * n_feat)
                   : 0.0;
        if (n_num > 0) {
            m[5] = mean_sum / n_num;
            double dev = 0.0;
            for (const auto& f : s.features) {
                if (f.kind != ColumnKind::Numeric) continue;
                const double d = f.mean - m[5];
                dev += d * d;
            }
            m[6] = std::sqrt(dev / n_num);
            m[7] = std_sum / n_num;
        }
        m[10] = n_cat > 0 ? std::log1p(card_sum / n_cat) : 0.0;
        m[11] = static_cast<double>(n_with_missing) / n_feat;
    }
    m[8] = static_cast<double>(s.n_classes);
    m[9] = s.majority_ratio;
    return m;
}

MetaFeatures metafeatures(const Table& t) {
    if (t.n_cols() == 0) throw DataError("metafeatures: table has no columns");
    if (t.n_rows() == 0) throw DataError("metafeatures: table has no rows");
    return metafeatures_from(summarize(t));
}

LearningJob LearningJob::make(std::string name, Table dataset) {
    LearningJob job;
    job.name = std::move(name);
    job.raw_metafeatures = metafeatures(dataset);
    job.dataset = std::move(dataset);
    return job;
}

}  // namespace gridpipe
