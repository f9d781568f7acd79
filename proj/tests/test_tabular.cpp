#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "gridpipe/csv.hpp"
#include "gridpipe/split.hpp"
#include "gridpipe/table.hpp"
#include "support/toy_data.hpp"

using namespace gridpipe;
namespace ts = gridpipe::testsupport;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path.string();
}

bool tables_equal(const Table& a, const Table& b) {
    if (a.n_rows() != b.n_rows() || a.n_cols() != b.n_cols()) return false;
    if (a.target_index() != b.target_index()) return false;
    for (int i = 0; i < a.n_cols(); ++i) {
        const Column& ca = a.col(i);
        const Column& cb = b.col(i);
        if (ca.name != cb.name || ca.kind != cb.kind || ca.lineage != cb.lineage) return false;
        if (ca.missing != cb.missing) return false;
        for (int r = 0; r < a.n_rows(); ++r) {
            if (ca.is_missing(static_cast<std::size_t>(r))) continue;
            if (ca.kind == ColumnKind::Numeric) {
                if (ca.numeric[static_cast<std::size_t>(r)] != cb.numeric[static_cast<std::size_t>(r)]) return false;
            } else if (ca.labels[static_cast<std::size_t>(r)] != cb.labels[static_cast<std::size_t>(r)]) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace

TEST_CASE("load_csv types numeric columns") {
    const auto path = write_temp("gp_num.csv", "x,y\n1,a\n2,a\n3,b\n");
    const Table t = load_csv(path, "y");
    REQUIRE(t.n_rows() == 3);
    CHECK(t.col(0).kind == ColumnKind::Numeric);
    CHECK(t.col(0).missing_count() == 0);
    CHECK(t.col(0).numeric == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(t.target_index() == 1);
}

TEST_CASE("load_csv marks empty cells missing and keeps the column categorical") {
    const auto path = write_temp("gp_cat.csv", "c,y\na,0\n,0\nb,1\n");
    const Table t = load_csv(path, "y");
    CHECK(t.col(0).kind == ColumnKind::Categorical);
    CHECK(t.col(0).missing_count() == 1);
    CHECK(t.col(0).is_missing(1));
}

TEST_CASE("load_csv reports ragged rows by record number") {
    const auto path = write_temp("gp_ragged.csv", "a,b,c\n1,2,3,4\n");
    try {
        load_csv(path, "c");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
}

TEST_CASE("load_csv error paths") {
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", "y"), DataError);
    const auto path = write_temp("gp_target.csv", "a,b\n1,2\n");
    CHECK_THROWS_AS(load_csv(path, "zzz"), DataError);
    const auto path2 = write_temp("gp_missing_target.csv", "a,y\n1,\n2,x\n");
    CHECK_THROWS_AS(load_csv(path2, "y"), DataError);
}

TEST_CASE("csv round trip reproduces the table exactly") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const Table t = ts::random_table(rng);
        const auto path = write_temp("gp_round.csv", "");
        save_csv(t, path);
        const Table back = load_csv(path, "label");
        CHECK(tables_equal(t, back));
    }
    // quoted fields: commas, quotes and newlines survive
    std::vector<Column> cols;
    cols.push_back(Column::make_categorical("c", "raw/c", {"a,b", "say \"hi\"", "two\nlines"}));
    cols.push_back(Column::make_categorical("y", "raw/y", {"0", "1", "0"}));
    const Table weird(std::move(cols), 1);
    const auto path = write_temp("gp_quoted.csv", "");
    save_csv(weird, path);
    CHECK(tables_equal(weird, load_csv(path, "y")));
}

TEST_CASE("split_train_test: 100 rows at 0.8 give a stratified 80/20 split") {
    const Table t = ts::make_blobs(100, 11);  // alternating classes, 50/50
    const auto [train, test] = split_train_test(t, 0.8, 3);
    REQUIRE(train.n_rows() == 80);
    REQUIRE(test.n_rows() == 20);
    // each class splits 40/10 (derived by per-class floor arithmetic)
    const auto count = [](const Table& x, const std::string& cls) {
        int n = 0;
        for (const auto& l : x.target()->labels) n += l == cls ? 1 : 0;
        return n;
    };
    CHECK(count(train, "pos") == 40);
    CHECK(count(train, "neg") == 40);
    CHECK(count(test, "pos") == 10);
    CHECK(count(test, "neg") == 10);
}

TEST_CASE("split_train_test is deterministic and validates inputs") {
    const Table t = ts::make_three_class(60, 5);
    const auto [a1, b1] = split_train_test(t, 0.7, 42);
    const auto [a2, b2] = split_train_test(t, 0.7, 42);
    CHECK(tables_equal(a1, a2));
    CHECK(tables_equal(b1, b2));

    std::vector<Column> cols;
    cols.push_back(Column::make_numeric("x", "raw/x", {1, 2, 3}));
    cols.push_back(Column::make_categorical("y", "raw/y", {"a", "a", "b"}));
    const Table tiny(std::move(cols), 1);  // class "b" has a single row
    CHECK_THROWS_AS(split_train_test(tiny, 0.8, 1), DataError);
    CHECK_THROWS_AS(split_train_test(t, 1.5, 1), UsageError);
}

TEST_CASE("split_train_test keeps class proportions within one row") {
    Rng rng(19);
    for (int trial = 0; trial < 40; ++trial) {
        const Table t = ts::random_table(rng);
        const auto [train, test] = split_train_test(t, 0.75, trial);
        for (const auto& cls : t.class_levels()) {
            int total = 0, in_test = 0;
            for (const auto& l : t.target()->labels) total += l == cls ? 1 : 0;
            for (const auto& l : test.target()->labels) in_test += l == cls ? 1 : 0;
            const double expected = total * 0.25;
            CHECK(std::abs(in_test - expected) <= 1.0);
        }
    }
}

TEST_CASE("kfold_split partitions rows into stratified folds") {
    const Table t90 = ts::make_blobs(90, 2);
    const auto folds = kfold_split(t90, 3, 9);
    REQUIRE(folds.size() == 3);
    for (const auto& f : folds) CHECK(f.valid.n_rows() == 30);

    // 91 rows: one extra row goes to the earliest fold
    const Table t91 = ts::make_three_class(91, 2);
    const auto folds91 = kfold_split(t91, 3, 9);
    CHECK(folds91[0].valid.n_rows() == 31);
    CHECK(folds91[1].valid.n_rows() == 30);
    CHECK(folds91[2].valid.n_rows() == 30);
}

TEST_CASE("kfold validation sets cover every row exactly once") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const Table t = ts::random_table(rng);
        const int k = 2 + static_cast<int>(rng.bounded(3));
        std::vector<int> assignment;
        try {
            assignment = kfold_assignment(t, k, trial);
        } catch (const DataError&) {
            continue;  // a class smaller than k
        }
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int r = 0; r < t.n_rows(); ++r) {
            REQUIRE(assignment[static_cast<std::size_t>(r)] >= 0);
            REQUIRE(assignment[static_cast<std::size_t>(r)] < k);
            ++counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(r)])];
        }
        int total = 0;
        for (int c : counts) total += c;
        CHECK(total == t.n_rows());
    }
}

TEST_CASE("kfold rejects classes smaller than k") {
    std::vector<Column> cols;
    cols.push_back(Column::make_numeric("x", "raw/x", {1, 2, 3, 4, 5}));
    cols.push_back(Column::make_categorical("y", "raw/y", {"a", "a", "a", "b", "b"}));
    const Table t(std::move(cols), 1);
    CHECK_THROWS_AS(kfold_split(t, 3, 0), DataError);
}

TEST_CASE("metafeatures match their definitions") {
    std::vector<Column> cols;
    cols.push_back(Column::make_numeric("a", "raw/a", {1, 2, 3, 4}));
    cols.push_back(Column::make_numeric("b", "raw/b", {5, 5, 5, 5}));
    cols.push_back(Column::make_numeric("c", "raw/c", {0, 1, 0, 1}));
    cols.push_back(Column::make_numeric("d", "raw/d", {2, 4, 6, 8}));
    cols.push_back(Column::make_categorical("y", "raw/y", {"u", "u", "v", "v"}));
    const Table t(std::move(cols), 4);
    const MetaFeatures m = metafeatures(t);
    CHECK(m[2] == 1.0);  // all-numeric features
    CHECK(m[3] == 0.0);
    CHECK(m[4] == 0.0);  // no missing cells
    CHECK(m[8] == 2.0);
    CHECK(m[9] == 0.5);

    std::vector<Column> cols2;
    cols2.push_back(Column::make_numeric("a", "raw/a", {1, 2}));
    cols2.push_back(Column::make_numeric("b", "raw/b", {1, 2}));
    cols2.push_back(Column::make_numeric("c", "raw/c", {1, 2}));
    cols2.push_back(Column::make_categorical("d", "raw/d", {"x", "y"}));
    cols2.push_back(Column::make_categorical("y", "raw/y", {"u", "v"}));
    const Table t2(std::move(cols2), 4);
    CHECK(metafeatures(t2)[2] == doctest::Approx(0.75));
}

TEST_CASE("metafeatures are fixed-length and finite on random tables") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const Table t = ts::random_table(rng);
        const MetaFeatures m = metafeatures(t);
        REQUIRE(m.size() == 12);
        for (double v : m) CHECK(std::isfinite(v));
    }
    CHECK_THROWS_AS(metafeatures(Table({}, std::nullopt)), DataError);
}

TEST_CASE("table invariants") {
    // lineage uniqueness
    std::vector<Column> dup;
    dup.push_back(Column::make_numeric("a", "raw/a", {1}));
    dup.push_back(Column::make_numeric("b", "raw/a", {2}));
    CHECK_THROWS_AS(Table(std::move(dup), std::nullopt), DataError);

    // target must not have missing values
    std::vector<Column> miss;
    miss.push_back(Column::make_numeric("a", "raw/a", {1, 2}));
    miss.push_back(Column::make_categorical("y", "raw/y", {"u", ""}, {0, 1}));
    CHECK_THROWS_AS(Table(std::move(miss), 1), DataError);
}
