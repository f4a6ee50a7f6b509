#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fewtab/common.hpp"

namespace fewtab {

enum class FeatureKind { Numeric, Categorical };

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::Numeric;
    std::vector<std::string> categories;  // Categorical only; sorted, no duplicates
};

/// Rows x features numeric matrix with labels. Missing cells are NaN.
/// Categorical cells keep their raw strings in `raw_text` until encode() maps
/// them to category indices.
struct Dataset {
    std::vector<FeatureSpec> features;
    std::vector<double> values;  // row-major, n_rows * n_features
    std::vector<std::vector<std::optional<std::string>>> raw_text;  // [col][row], categorical only
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::optional<std::vector<std::pair<double, double>>> norm_stats;  // per-feature (min, max)

    size_t n_rows() const { return labels.size(); }
    size_t n_cols() const { return features.size(); }

    double at(size_t r, size_t c) const { return values[r * n_cols() + c]; }
    double& at(size_t r, size_t c) { return values[r * n_cols() + c]; }

    /// True once every categorical cell has been replaced by its index.
    bool encoded() const;
};

struct CsvOptions {
    std::string label_column;
    std::vector<std::string> missing_markers = {"", "NA", "?"};
    std::optional<std::vector<FeatureSpec>> schema;  // overrides inferred kinds by name
};

/// Parse a CSV file (RFC 4180 quoting, header row required) into a Dataset.
/// Column kinds are taken from the schema when given, otherwise inferred:
/// a column where every non-missing cell parses as a number is Numeric.
Dataset load_csv(const std::string& path, const CsvOptions& opts);

/// Replace every categorical cell by its index in the feature's category list.
/// Category lists are built lexicographically on first pass when the spec does
/// not already carry them; a value outside a pinned list is an error.
Dataset encode_labels(const Dataset& ds);

/// Fill missing numeric cells with the column median, missing categorical
/// cells with the column mode (ties broken toward the smaller index).
Dataset impute(const Dataset& ds);

/// Min-max scale every column into [0, 1] using `stats` when given, else
/// stats computed from `ds`. Constant columns map to 0.5. Values scaled with
/// external stats are clamped into [0, 1]. A dataset that already carries
/// norm_stats is returned unchanged when no stats are supplied.
Dataset normalize(const Dataset& ds,
                  const std::optional<std::vector<std::pair<double, double>>>& stats = std::nullopt);

/// Deterministic stratified split. Fractions must be positive and sum to 1;
/// every class needs at least as many rows as there are parts.
std::vector<Dataset> split(const Dataset& ds, uint64_t seed, const std::vector<double>& fractions);

}  // namespace fewtab
