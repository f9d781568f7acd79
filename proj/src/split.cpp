#include "gridpipe/split.hpp"

#include <algorithm>
#include <cmath>

namespace gridpipe {

namespace {

std::vector<std::vector<int>> rows_by_class(const Table& t) {
    if (!t.target()) throw DataError("split: table has no target column");
    const auto levels = t.class_levels();
    const auto codes = t.target_codes(levels);
    std::vector<std::vector<int>> groups(levels.size());
    for (int r = 0; r < t.n_rows(); ++r) groups[static_cast<std::size_t>(codes[static_cast<std::size_t>(r)])].push_back(r);
    return groups;
}

}  // namespace

std::pair<Table, Table> split_train_test(const Table& t, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("split: ratio must be in (0,1)");
    auto groups = rows_by_class(t);
    Rng rng(hash_combine(seed, fnv1a64("train_test_split")));
    std::vector<int> train_rows, test_rows;
    for (auto& rows : groups) {
        if (rows.size() < 2) {
            throw DataError("split: a class has fewer than 2 rows, cannot stratify");
        }
        rng.shuffle(rows);
        // Small nudge so exact-ratio products like 50*0.2 do not floor down
        // through representation error.
        const int n_test = static_cast<int>(
            std::floor(static_cast<double>(rows.size()) * (1.0 - ratio) + 1e-9));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            (static_cast<int>(i) < n_test ? test_rows : train_rows).push_back(rows[i]);
        }
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {t.select_rows(train_rows), t.select_rows(test_rows)};
}

std::vector<int> kfold_assignment(const Table& t, int k, std::uint64_t seed) {
    if (k < 2) throw UsageError("kfold: k must be >= 2");
    auto groups = rows_by_class(t);
    Rng rng(hash_combine(seed, fnv1a64("kfold_split")));
    std::vector<int> assignment(static_cast<std::size_t>(t.n_rows()), -1);
    std::vector<int> fold_sizes(static_cast<std::size_t>(k), 0);
    for (auto& rows : groups) {
        if (static_cast<int>(rows.size()) < k) {
            throw DataError("kfold: a class has fewer than k rows");
        }
        rng.shuffle(rows);
        const int base = static_cast<int>(rows.size()) / k;
        int extras = static_cast<int>(rows.size()) % k;
        std::vector<int> counts(static_cast<std::size_t>(k), base);
        // Spare rows go to the currently smallest folds (ties to the lowest
        // index), which keeps overall fold sizes within one row.
        for (; extras > 0; --extras) {
            int best = 0;
            for (int f = 1; f < k; ++f) {
                if (fold_sizes[static_cast<std::size_t>(f)] + counts[static_cast<std::size_t>(f)] <
                    fold_sizes[static_cast<std::size_t>(best)] + counts[static_cast<std::size_t>(best)]) {
                    best = f;
                }
            }
            ++counts[static_cast<std::size_t>(best)];
        }
        std::size_t pos = 0;
        for (int f = 0; f < k; ++f) {
            for (int i = 0; i < counts[static_cast<std::size_t>(f)]; ++i) {
                assignment[static_cast<std::size_t>(rows[pos++])] = f;
            }
            fold_sizes[static_cast<std::size_t>(f)] += counts[static_cast<std::size_t>(f)];
        }
    }
    return assignment;
}

std::vector<Fold> kfold_split(const Table& t, int k, std::uint64_t seed) {
    const auto assignment = kfold_assignment(t, k, seed);
    std::vector<Fold> folds;
    folds.reserve(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f) {
        std::vector<int> train_rows, valid_rows;
        for (int r = 0; r < t.n_rows(); ++r) {
            (assignment[static_cast<std::size_t>(r)] == f ? valid_rows : train_rows).push_back(r);
        }
        folds.push_back(Fold{t.select_rows(train_rows), t.select_rows(valid_rows)});
    }
    return folds;
}

}  // namespace gridpipe
