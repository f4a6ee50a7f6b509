#include "fewtab/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace fewtab {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0;
    size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool parse_number(const std::string& cell, double& out) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size() && std::isfinite(out);
}

// RFC 4180: quoted fields may contain commas, newlines and "" escapes.
std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    bool in_quotes = false;
    bool cell_started = false;
    bool row_started = false;
    int ch;
    while ((ch = in.get()) != EOF) {
        const char c = static_cast<char>(ch);
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    cell.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                cell.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!cell_started || cell.empty()) {
                    in_quotes = true;
                    cell_started = true;
                    row_started = true;
                } else {
                    cell.push_back(c);
                }
                break;
            case ',':
                row.push_back(cell);
                cell.clear();
                cell_started = false;
                row_started = true;
                break;
            case '\r':
                break;
            case '\n':
                if (row_started || cell_started || !cell.empty()) {
                    row.push_back(cell);
                    rows.push_back(std::move(row));
                    row = {};
                    cell.clear();
                    cell_started = false;
                    row_started = false;
                }
                break;
            default:
                cell.push_back(c);
                cell_started = true;
                row_started = true;
                break;
        }
    }
    if (in_quotes) throw FormatError("csv: unterminated quoted field");
    if (row_started || cell_started || !cell.empty()) {
        row.push_back(cell);
        rows.push_back(std::move(row));
    }
    return rows;
}

bool is_missing(const std::string& cell, const std::vector<std::string>& markers) {
    const std::string t = trim(cell);
    return std::find(markers.begin(), markers.end(), t) != markers.end();
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

bool Dataset::encoded() const {
    for (const auto& col : raw_text) {
        if (!col.empty()) return false;
    }
    return true;
}

Dataset load_csv(const std::string& path, const CsvOptions& opts) {
    if (opts.label_column.empty()) throw ConfigError("load_csv: no label column given");

    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_csv: cannot open '" + path + "'");
    auto rows = parse_csv(f);
    if (rows.empty()) throw FormatError("load_csv: '" + path + "' is empty");

    const auto& header = rows.front();
    const size_t n_cols = header.size();
    if (rows.size() < 2) throw Error("load_csv: '" + path + "' has no data rows");

    for (size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != n_cols) {
            throw FormatError("load_csv: row " + std::to_string(r) + " has " +
                              std::to_string(rows[r].size()) + " cells, expected " +
                              std::to_string(n_cols));
        }
    }

    size_t label_col = n_cols;
    for (size_t c = 0; c < n_cols; ++c) {
        if (trim(header[c]) == opts.label_column) {
            label_col = c;
            break;
        }
    }
    if (label_col == n_cols) {
        throw ConfigError("load_csv: label column '" + opts.label_column + "' not in header");
    }

    const size_t n_data_rows = rows.size() - 1;
    const size_t n_features = n_cols - 1;

    Dataset ds;
    ds.features.resize(n_features);
    ds.raw_text.resize(n_features);
    ds.values.assign(n_data_rows * n_features, std::nan(""));

    std::vector<size_t> feature_cols;
    for (size_t c = 0; c < n_cols; ++c) {
        if (c != label_col) feature_cols.push_back(c);
    }

    for (size_t j = 0; j < n_features; ++j) {
        ds.features[j].name = trim(header[feature_cols[j]]);
    }

    // Kind per column: schema wins, otherwise infer from the cells.
    for (size_t j = 0; j < n_features; ++j) {
        FeatureSpec& spec = ds.features[j];
        bool pinned = false;
        if (opts.schema) {
            for (const auto& s : *opts.schema) {
                if (s.name == spec.name) {
                    spec.kind = s.kind;
                    spec.categories = s.categories;
                    pinned = true;
                    break;
                }
            }
        }
        if (!pinned) {
            bool numeric = true;
            for (size_t r = 1; r < rows.size() && numeric; ++r) {
                const std::string& cell = rows[r][feature_cols[j]];
                if (is_missing(cell, opts.missing_markers)) continue;
                double tmp;
                if (!parse_number(cell, tmp)) numeric = false;
            }
            spec.kind = numeric ? FeatureKind::Numeric : FeatureKind::Categorical;
        }
    }

    for (size_t j = 0; j < n_features; ++j) {
        if (ds.features[j].kind == FeatureKind::Categorical) {
            ds.raw_text[j].assign(n_data_rows, std::nullopt);
        }
    }

    for (size_t r = 1; r < rows.size(); ++r) {
        const size_t i = r - 1;
        for (size_t j = 0; j < n_features; ++j) {
            const std::string& cell = rows[r][feature_cols[j]];
            if (is_missing(cell, opts.missing_markers)) continue;
            if (ds.features[j].kind == FeatureKind::Numeric) {
                double v;
                if (!parse_number(cell, v)) {
                    throw FormatError("load_csv: row " + std::to_string(r) + ", feature '" +
                                      ds.features[j].name + "': '" + cell + "' is not numeric");
                }
                ds.at(i, j) = v;
            } else {
                ds.raw_text[j][i] = trim(cell);
            }
        }
    }

    // Labels: lexicographically ordered class names, cells mapped to indices.
    std::set<std::string> label_set;
    for (size_t r = 1; r < rows.size(); ++r) {
        const std::string cell = trim(rows[r][label_col]);
        if (is_missing(cell, opts.missing_markers)) {
            throw FormatError("load_csv: row " + std::to_string(r) + " has a missing label");
        }
        label_set.insert(cell);
    }
    ds.class_names.assign(label_set.begin(), label_set.end());
    ds.labels.resize(n_data_rows);
    for (size_t r = 1; r < rows.size(); ++r) {
        const std::string cell = trim(rows[r][label_col]);
        const auto it = std::lower_bound(ds.class_names.begin(), ds.class_names.end(), cell);
        ds.labels[r - 1] = static_cast<int>(it - ds.class_names.begin());
    }
    return ds;
}

Dataset encode_labels(const Dataset& ds) {
    Dataset out = ds;
    for (size_t j = 0; j < ds.n_cols(); ++j) {
        if (ds.features[j].kind != FeatureKind::Categorical) continue;
        const auto& col = ds.raw_text[j];
        if (col.empty()) continue;  // already encoded

        std::vector<std::string> cats = ds.features[j].categories;
        if (cats.empty()) {
            std::set<std::string> seen;
            for (const auto& cell : col) {
                if (cell) seen.insert(*cell);
            }
            cats.assign(seen.begin(), seen.end());
        }
        for (size_t r = 0; r < col.size(); ++r) {
            if (!col[r]) continue;  // missing stays NaN for impute
            const auto it = std::lower_bound(cats.begin(), cats.end(), *col[r]);
            if (it == cats.end() || *it != *col[r]) {
                throw Error("encode_labels: unknown category '" + *col[r] + "' in feature '" +
                            ds.features[j].name + "'");
            }
            out.at(r, j) = static_cast<double>(it - cats.begin());
        }
        out.features[j].categories = std::move(cats);
        out.raw_text[j].clear();
    }
    return out;
}

Dataset impute(const Dataset& ds) {
    if (!ds.encoded()) throw StateError("impute: encode categorical features first");
    Dataset out = ds;
    const size_t rows = ds.n_rows();
    for (size_t j = 0; j < ds.n_cols(); ++j) {
        std::vector<double> present;
        present.reserve(rows);
        for (size_t r = 0; r < rows; ++r) {
            if (!std::isnan(ds.at(r, j))) present.push_back(ds.at(r, j));
        }
        if (present.size() == rows) continue;
        if (present.empty()) {
            throw Error("impute: feature '" + ds.features[j].name + "' is entirely missing");
        }
        double fill;
        if (ds.features[j].kind == FeatureKind::Numeric) {
            fill = median_of(present);
        } else {
            std::map<double, size_t> counts;
            for (const double v : present) ++counts[v];
            fill = counts.begin()->first;
            size_t best = counts.begin()->second;
            for (const auto& [v, n] : counts) {
                if (n > best) {
                    best = n;
                    fill = v;
                }
            }
        }
        for (size_t r = 0; r < rows; ++r) {
            if (std::isnan(out.at(r, j))) out.at(r, j) = fill;
        }
    }
    return out;
}

Dataset normalize(const Dataset& ds,
                  const std::optional<std::vector<std::pair<double, double>>>& stats) {
    if (!stats && ds.norm_stats) return ds;  // second pass is a no-op

    for (size_t i = 0; i < ds.values.size(); ++i) {
        if (std::isnan(ds.values[i])) throw StateError("normalize: impute missing values first");
    }
    if (stats && stats->size() != ds.n_cols()) {
        throw DimensionError("normalize: stats size " + std::to_string(stats->size()) +
                             " != feature count " + std::to_string(ds.n_cols()));
    }

    Dataset out = ds;
    std::vector<std::pair<double, double>> mm(ds.n_cols());
    const size_t rows = ds.n_rows();
    for (size_t j = 0; j < ds.n_cols(); ++j) {
        if (stats) {
            mm[j] = (*stats)[j];
        } else {
            double lo = ds.at(0, j);
            double hi = ds.at(0, j);
            for (size_t r = 1; r < rows; ++r) {
                lo = std::min(lo, ds.at(r, j));
                hi = std::max(hi, ds.at(r, j));
            }
            mm[j] = {lo, hi};
        }
        const auto [lo, hi] = mm[j];
        for (size_t r = 0; r < rows; ++r) {
            double v;
            if (hi <= lo) {
                v = 0.5;  // constant column
            } else {
                v = (out.at(r, j) - lo) / (hi - lo);
            }
            out.at(r, j) = std::clamp(v, 0.0, 1.0);
        }
    }
    out.norm_stats = std::move(mm);
    return out;
}

std::vector<Dataset> split(const Dataset& ds, uint64_t seed, const std::vector<double>& fractions) {
    if (fractions.empty()) throw ConfigError("split: no fractions given");
    double sum = 0.0;
    for (const double f : fractions) {
        if (f <= 0.0) throw ConfigError("split: fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

    const size_t n_parts = fractions.size();
    std::map<int, std::vector<size_t>> by_class;
    for (size_t r = 0; r < ds.n_rows(); ++r) by_class[ds.labels[r]].push_back(r);

    std::vector<std::vector<size_t>> part_rows(n_parts);
    Rng rng(seed);
    for (auto& [cls, rows] : by_class) {
        if (rows.size() < n_parts) {
            throw CapacityError("split: class '" + ds.class_names[static_cast<size_t>(cls)] +
                                "' has " + std::to_string(rows.size()) + " rows for " +
                                std::to_string(n_parts) + " parts");
        }
        Rng class_rng = rng.fork(static_cast<uint64_t>(cls));
        class_rng.shuffle(rows);

        // Largest-remainder allocation keeps per-class ratios within one row.
        std::vector<size_t> counts(n_parts);
        std::vector<std::pair<double, size_t>> rema(n_parts);
        size_t assigned = 0;
        for (size_t p = 0; p < n_parts; ++p) {
            const double target = fractions[p] * static_cast<double>(rows.size());
            counts[p] = static_cast<size_t>(std::floor(target));
            rema[p] = {target - std::floor(target), p};
            assigned += counts[p];
        }
        std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t k = 0; assigned < rows.size(); ++k, ++assigned) ++counts[rema[k].second];

        size_t pos = 0;
        for (size_t p = 0; p < n_parts; ++p) {
            for (size_t k = 0; k < counts[p]; ++k) part_rows[p].push_back(rows[pos++]);
        }
    }

    std::vector<Dataset> parts;
    parts.reserve(n_parts);
    for (size_t p = 0; p < n_parts; ++p) {
        std::sort(part_rows[p].begin(), part_rows[p].end());
        Dataset part;
        part.features = ds.features;
        part.class_names = ds.class_names;
        part.norm_stats = ds.norm_stats;
        part.raw_text.resize(ds.n_cols());
        for (size_t j = 0; j < ds.n_cols(); ++j) {
            if (!ds.raw_text[j].empty()) part.raw_text[j].reserve(part_rows[p].size());
        }
        part.values.reserve(part_rows[p].size() * ds.n_cols());
        for (const size_t r : part_rows[p]) {
            part.labels.push_back(ds.labels[r]);
            for (size_t j = 0; j < ds.n_cols(); ++j) part.values.push_back(ds.at(r, j));
            for (size_t j = 0; j < ds.n_cols(); ++j) {
                if (!ds.raw_text[j].empty()) part.raw_text[j].push_back(ds.raw_text[j][r]);
            }
        }
        parts.push_back(std::move(part));
    }
    return parts;
}

}  // namespace fewtab
