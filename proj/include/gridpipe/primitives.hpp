#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gridpipe/table.hpp"

namespace gridpipe {

/// Grid column c may only hold primitives of family c.
enum class Family : int {
    DataPreprocessing = 1,
    FeaturePreprocessing = 2,
    FeatureSelection = 3,
    FeatureEngineering = 4,
    Estimator = 5,
    Combiner = 6,
};

enum class Algo {
    ImputeMeanMode,
    OneHot,
    DropConstant,
    MinMaxScale,
    Standardize,
    Discretize,
    SelectVariance,
    SelectMutualInfo,
    SelectChi2,
    PcaProject,
    PairwiseProducts,
    RandomProjection,
    DecisionTree,
    RandomForest,
    Knn,
    NaiveBayes,
    LogisticRegression,
};

struct PrimitiveSpec {
    int id = 0;  // dense 1..|catalog|; 0 is the reserved blank pseudo-primitive
    std::string name;
    Family family = Family::DataPreprocessing;
    Algo algo = Algo::ImputeMeanMode;
    bool handles_missing = false;
    bool handles_categorical = false;
    bool requires_nonnegative = false;
    std::map<std::string, double> hyperparameters;

    bool is_estimator() const {
        return family == Family::Estimator || family == Family::Combiner;
    }
};

/// The fixed primitive catalog. Families 5 and 6 share the same five
/// algorithms; family 6 entries act as meta-learners over upstream outputs.
const std::vector<PrimitiveSpec>& catalog();
const PrimitiveSpec& primitive_by_id(int id);
std::string catalog_to_json();
std::uint64_t catalog_hash();

/// Whether the primitive can process this (already merged) input: missing
/// cells, categorical columns and negative values are only allowed when the
/// primitive's flags say so, and at least one feature column must exist.
/// Feature columns only; the target label column is exempt.
bool can_accept(const PrimitiveSpec& p, const TableSummary& merged);
bool can_accept(const PrimitiveSpec& p, const Table& merged);

/// Horizontal concatenation in input order. Columns whose lineage id already
/// appeared are dropped (first occurrence kept); the target comes from the
/// first input. Row-count mismatch is a pipeline bug, reported as logic_error.
Table merge_inputs(std::span<const Table* const> inputs);

class PrimitiveState;  // learned parameters, opaque per primitive

/// A primitive fitted on one input schema. Applying it to the fitting table
/// reproduces the fit-time output exactly.
struct FittedPrimitive {
    int spec_id = 0;
    std::vector<std::pair<std::string, ColumnKind>> signature;  // fit-time features
    bool fallback_identity = false;  // transformer hit a numerical failure
    std::shared_ptr<const PrimitiveState> state;
};

struct FitResult {
    FittedPrimitive fitted;
    Table output;
};

/// Fits on `input` and returns the transformed table. Transformers keep the
/// target untouched; estimators/combiners replace the feature columns with
/// one categorical prediction column (lineage "cellpredict/<provenance>")
/// plus one numeric score column per class. `provenance` tags generated
/// columns so outputs of different grid cells never collide at merges.
FitResult fit_apply(const PrimitiveSpec& p, const Table& input, std::uint64_t seed,
                    const std::string& provenance = "fit");

/// Applies learned parameters to a table with the fit-time feature schema.
/// Unseen categorical levels fall into an "unknown" bucket.
Table apply(const FittedPrimitive& fp, const Table& input);

}  // namespace gridpipe
