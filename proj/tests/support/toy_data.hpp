#pragma once

#include <string>
#include <vector>

#include "gridpipe/environment.hpp"
#include "gridpipe/pipeline.hpp"
#include "gridpipe/table.hpp"

namespace gridpipe::testsupport {

// Two Gaussian blobs, two numeric features, balanced classes.
Table make_blobs(int rows, std::uint64_t seed);

// XOR labels over two numeric features plus a categorical noise column and a
// numeric column with missing cells (pipelines must impute before modeling).
Table make_xor_mixed(int rows, std::uint64_t seed);

// Three imbalanced classes (5:3:2) with one informative numeric feature,
// one noise feature and one class-correlated categorical feature.
Table make_three_class(int rows, std::uint64_t seed);

// The three datasets above as learning jobs (the acceptance toy corpus).
std::vector<LearningJob> toy_corpus(std::uint64_t seed);

// Random table for property tests: >= 1 feature column, 2-3 classes, each
// class at least min_class_rows rows.
struct RandomTableOptions {
    int min_rows = 24;
    int max_rows = 60;
    int max_features = 5;
    bool allow_missing = true;
    bool allow_categorical = true;
    bool allow_negative = true;
    int min_class_rows = 3;
};
Table random_table(Rng& rng, const RandomTableOptions& opts = {});

// Injective deterministic score over (primitive, inputs); padding scores
// lowest. Drives the tournament-vs-argmax oracles.
double oracle_score(const ActionCandidate& a);

// Brute-force open-list oracle: re-derives the candidate-output set and the
// input subsets from the grid by bitmask enumeration, materializes every
// merge and filters with can_accept on the actual tables. Independent of the
// summary-based production path. Returns sorted (primitive, inputs) pairs.
std::vector<std::pair<int, std::vector<int>>> oracle_open_list(const Environment& env);
std::vector<std::pair<int, std::vector<int>>> as_pairs(const std::vector<ActionCandidate>& open);

// A 3-row grid equivalent to the worked example: seven steps, eight
// vertices (with the raw source) and eight edges; step six takes a second
// input from step one.
Grid example_grid();

}  // namespace gridpipe::testsupport
