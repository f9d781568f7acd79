#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gridpipe/table.hpp"

namespace gridpipe {

/// Stratified train/test split. Per class, floor(count * (1 - ratio)) rows
/// go to the test side; partitions are exact and deterministic in the seed.
/// Throws DataError when a class has fewer than 2 rows.
std::pair<Table, Table> split_train_test(const Table& t, double ratio, std::uint64_t seed);

struct Fold {
    Table train;
    Table valid;
};

/// k stratified folds whose validation sets partition the rows. Rows left
/// over after equal division go to the lowest-index folds. Throws DataError
/// when any class has fewer than k rows.
std::vector<Fold> kfold_split(const Table& t, int k, std::uint64_t seed);

/// Row-index form of kfold_split (fold id per row), used by the evaluator
/// so both share one partition.
std::vector<int> kfold_assignment(const Table& t, int k, std::uint64_t seed);

}  // namespace gridpipe
