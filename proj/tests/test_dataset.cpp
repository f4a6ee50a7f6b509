#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fewtab/dataset.hpp"

using namespace fewtab;
namespace fs = std::filesystem;

namespace {

fs::path write_tmp(const std::string& name, const std::string& content) {
    const fs::path dir = fs::temp_directory_path() / "fewtab_dataset_tests";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
}

Dataset basic_dataset() {
    const auto p = write_tmp("basic.csv",
                             "a,b,label\n"
                             "1,10,yes\n"
                             "2,20,no\n"
                             "3,30,yes\n");
    CsvOptions opts;
    opts.label_column = "label";
    return load_csv(p.string(), opts);
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("basic csv parse") {
    const Dataset ds = basic_dataset();
    CHECK(ds.n_rows() == 3);
    CHECK(ds.n_cols() == 2);
    CHECK(ds.features[0].name == "a");
    CHECK(ds.features[1].name == "b");
    CHECK(ds.features[0].kind == FeatureKind::Numeric);
    CHECK(ds.at(0, 0) == 1.0);
    CHECK(ds.at(2, 1) == 30.0);
    // classes are sorted lexicographically: no=0, yes=1
    CHECK(ds.class_names == std::vector<std::string>{"no", "yes"});
    CHECK(ds.labels == std::vector<int>{1, 0, 1});
}

TEST_CASE("quoting, CRLF and embedded separators") {
    const auto p = write_tmp("quoted.csv",
                             "name,score,label\r\n"
                             "\"x,y\",1,a\r\n"
                             "\"he said \"\"hi\"\"\",2,b\r\n");
    CsvOptions opts;
    opts.label_column = "label";
    const Dataset ds = load_csv(p.string(), opts);
    CHECK(ds.n_rows() == 2);
    CHECK(ds.features[0].kind == FeatureKind::Categorical);
    REQUIRE(ds.raw_text[0].size() == 2);
    CHECK(*ds.raw_text[0][0] == "x,y");
    CHECK(*ds.raw_text[0][1] == "he said \"hi\"");
}

TEST_CASE("ragged rows are rejected") {
    const auto p = write_tmp("ragged.csv", "a,b,label\n1,2,x\n1,x\n");
    CsvOptions opts;
    opts.label_column = "label";
    CHECK_THROWS_AS(load_csv(p.string(), opts), FormatError);
}

TEST_CASE("missing label column is a config error") {
    const auto p = write_tmp("nolabel.csv", "a,b,c\n1,2,3\n");
    CsvOptions opts;
    opts.label_column = "label";
    CHECK_THROWS_AS(load_csv(p.string(), opts), ConfigError);
}

TEST_CASE("empty and header-only files") {
    CsvOptions opts;
    opts.label_column = "label";
    CHECK_THROWS_AS(load_csv(write_tmp("empty.csv", "").string(), opts), FormatError);
    CHECK_THROWS_AS(load_csv(write_tmp("hdr.csv", "a,label\n").string(), opts), Error);
    CHECK_THROWS_AS(load_csv("/nonexistent/nope.csv", opts), IoError);
}

TEST_CASE("kind inference tolerates missing markers") {
    const auto p = write_tmp("kinds.csv",
                             "n,m,label\n"
                             "1.5,x,a\n"
                             "NA,2,b\n"
                             "2.5,?,a\n");
    CsvOptions opts;
    opts.label_column = "label";
    const Dataset ds = load_csv(p.string(), opts);
    CHECK(ds.features[0].kind == FeatureKind::Numeric);  // NA is missing, rest numeric
    CHECK(ds.features[1].kind == FeatureKind::Categorical);
    CHECK(std::isnan(ds.at(1, 0)));
}

TEST_CASE("encode maps categories to sorted indices") {
    const auto p = write_tmp("cats.csv",
                             "color,label\n"
                             "red,a\n"
                             "blue,b\n"
                             "green,a\n"
                             "red,b\n");
    CsvOptions opts;
    opts.label_column = "label";
    const Dataset ds = encode_labels(load_csv(p.string(), opts));
    CHECK(ds.encoded());
    CHECK(ds.features[0].categories == std::vector<std::string>{"blue", "green", "red"});
    CHECK(ds.at(0, 0) == 2.0);
    CHECK(ds.at(1, 0) == 0.0);
    CHECK(ds.at(2, 0) == 1.0);
}

TEST_CASE("pinned category list rejects unknown values") {
    const auto p = write_tmp("pinned.csv", "color,label\nred,a\nmauve,b\n");
    CsvOptions opts;
    opts.label_column = "label";
    FeatureSpec spec;
    spec.name = "color";
    spec.kind = FeatureKind::Categorical;
    spec.categories = {"blue", "red"};
    opts.schema = std::vector<FeatureSpec>{spec};
    CHECK_THROWS_WITH_AS(static_cast<void>(encode_labels(load_csv(p.string(), opts))),
                         doctest::Contains("mauve"), Error);
}

TEST_CASE("impute medians, modes and failure modes") {
    const auto p = write_tmp("gaps.csv",
                             "n,c,label\n"
                             "1,x,a\n"
                             "2,y,b\n"
                             "NA,x,a\n"
                             "4,NA,b\n"
                             "10,z,a\n");
    CsvOptions opts;
    opts.label_column = "label";
    const Dataset raw = load_csv(p.string(), opts);
    CHECK_THROWS_AS(static_cast<void>(impute(raw)), StateError);  // encode first

    const Dataset enc = encode_labels(raw);
    const Dataset ds = impute(enc);
    // median of {1,2,4,10} = 3 (even count averages the middle two)
    CHECK(ds.at(2, 0) == 3.0);
    // mode of {x,x,y,z} -> x (index 0)
    CHECK(ds.at(3, 1) == 0.0);

    const auto p2 = write_tmp("allmiss.csv", "n,label\nNA,a\nNA,b\n");
    CHECK_THROWS_AS(static_cast<void>(impute(encode_labels(load_csv(p2.string(), opts)))), Error);
}

TEST_CASE("impute median with odd count") {
    const auto p = write_tmp("odd.csv", "n,label\n1,a\n5,b\n9,a\nNA,b\n");
    CsvOptions opts;
    opts.label_column = "label";
    const Dataset ds = impute(encode_labels(load_csv(p.string(), opts)));
    CHECK(ds.at(3, 0) == 5.0);
}

TEST_CASE("normalize scales into [0,1]") {
    Dataset ds = impute(encode_labels(basic_dataset()));
    const Dataset n = normalize(ds);
    CHECK(n.at(0, 0) == 0.0);
    CHECK(n.at(1, 0) == 0.5);
    CHECK(n.at(2, 0) == 1.0);
    REQUIRE(n.norm_stats.has_value());
    CHECK((*n.norm_stats)[0] == std::pair<double, double>{1.0, 3.0});

    // second pass without explicit stats is a no-op
    const Dataset n2 = normalize(n);
    CHECK(n2.values == n.values);
}

TEST_CASE("normalize handles constant columns and clamps external stats") {
    const auto p = write_tmp("const.csv", "a,b,label\n7,1,x\n7,2,y\n7,3,x\n");
    CsvOptions opts;
    opts.label_column = "label";
    Dataset ds = impute(encode_labels(load_csv(p.string(), opts)));
    const Dataset n = normalize(ds);
    CHECK(n.at(0, 0) == 0.5);
    CHECK(n.at(1, 0) == 0.5);

    // stats from a narrower range clamp out-of-range rows
    std::vector<std::pair<double, double>> stats = {{0.0, 10.0}, {1.0, 2.0}};
    const Dataset c = normalize(ds, stats);
    CHECK(c.at(0, 0) == 0.7);
    CHECK(c.at(2, 1) == 1.0);  // 3 clamps to the top of [1,2]
}

TEST_CASE("normalize requires imputed input") {
    const auto p = write_tmp("nan.csv", "a,label\n1,x\nNA,y\n");
    CsvOptions opts;
    opts.label_column = "label";
    const Dataset ds = encode_labels(load_csv(p.string(), opts));
    CHECK_THROWS_AS(static_cast<void>(normalize(ds)), StateError);
}

TEST_CASE("split is stratified, disjoint and exhaustive") {
    // feature column carries the row id so part contents can be audited
    std::string csv = "id,label\n";
    for (int i = 0; i < 10; ++i) {
        csv += std::to_string(i) + "," + (i % 2 == 0 ? "even" : "odd") + "\n";
    }
    const auto p = write_tmp("split.csv", csv);
    CsvOptions opts;
    opts.label_column = "label";
    const Dataset ds = load_csv(p.string(), opts);

    const auto parts = split(ds, 11, {0.6, 0.4});
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].n_rows() == 6);
    CHECK(parts[1].n_rows() == 4);

    std::multiset<double> ids;
    for (const auto& part : parts) {
        for (size_t r = 0; r < part.n_rows(); ++r) ids.insert(part.at(r, 0));
    }
    CHECK(ids.size() == 10);
    CHECK(std::set<double>(ids.begin(), ids.end()).size() == 10);

    // per class: 5 rows at 0.6/0.4 -> 3/2
    for (int cls = 0; cls < 2; ++cls) {
        int in_first = 0;
        for (size_t r = 0; r < parts[0].n_rows(); ++r) {
            if (parts[0].labels[r] == cls) ++in_first;
        }
        CHECK(in_first == 3);
    }

    const auto again = split(ds, 11, {0.6, 0.4});
    CHECK(again[0].values == parts[0].values);
    const auto other = split(ds, 12, {0.6, 0.4});
    CHECK(other[0].values != parts[0].values);  // seed matters
}

TEST_CASE("split validates fractions and capacity") {
    const Dataset ds = basic_dataset();  // classes: yes x2, no x1
    CHECK_THROWS_AS(static_cast<void>(split(ds, 1, {})), ConfigError);
    CHECK_THROWS_AS(static_cast<void>(split(ds, 1, {0.5, 0.4})), ConfigError);
    CHECK_THROWS_AS(static_cast<void>(split(ds, 1, {-0.5, 1.5})), ConfigError);
    CHECK_THROWS_AS(static_cast<void>(split(ds, 1, {0.5, 0.5})), CapacityError);  // "no" has 1 row
}

}  // TEST_SUITE
