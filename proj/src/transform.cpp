#include "fewtab/transform.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include <json.hpp>

namespace fewtab {

namespace {

bool is_prime(int n) {
    if (n < 2) return false;
    for (int d = 2; d * d <= n; ++d) {
        if (n % d == 0) return false;
    }
    return true;
}

// Closest-to-square divisor pair (r <= c) with both sides on the 84-pixel
// grid; {0, 0} when no pair fits.
std::pair<int, int> best_pair(int m) {
    for (int r = static_cast<int>(std::sqrt(static_cast<double>(m))); r >= 1; --r) {
        if (m % r != 0) continue;
        const int c = m / r;
        if (r <= kImageSide && c <= kImageSide) return {r, c};
    }
    return {0, 0};
}

// Ranks the strict lower triangle of pairwise values and mirrors it.
RankingMatrix rank_pairs(int n, const std::vector<double>& pair_values) {
    const auto ranks = average_tie_ranks(pair_values);
    RankingMatrix out;
    out.size = n;
    out.entries.assign(static_cast<size_t>(n) * n, 0.0);
    size_t k = 0;
    for (int i = 1; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
            out.at(i, j) = ranks[k];
            out.at(j, i) = ranks[k];
            ++k;
        }
    }
    return out;
}

}  // namespace

std::vector<double> average_tie_ranks(const std::vector<double>& values) {
    const size_t n = values.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return values[a] < values[b]; });

    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

GridSpec choose_grid(int n_features) {
    if (n_features < 1) throw DimensionError("choose_grid: need at least one feature");
    const int max_cells = kImageSide * kImageSide;
    if (n_features > max_cells) {
        throw DimensionError("choose_grid: " + std::to_string(n_features) +
                             " features exceed the " + std::to_string(max_cells) + "-cell grid");
    }
    const auto direct = best_pair(n_features);
    const bool pad = (is_prime(n_features) && n_features > 3) || direct.first == 0;
    if (!pad) return {direct.first, direct.second, n_features};
    for (int m = n_features + 1; m <= max_cells; ++m) {
        const auto p = best_pair(m);
        if (p.first != 0 && p.second <= 3 * p.first) return {p.first, p.second, m};
    }
    throw DimensionError("choose_grid: no grid fits");  // unreachable: 84x84 always qualifies
}

RankingMatrix pixel_distance_ranking(const GridSpec& grid) {
    const int n = grid.n_rows * grid.n_cols;
    if (n != grid.n_features || n < 1) throw DimensionError("pixel_distance_ranking: bad grid");
    if (n == 1) return {1, {0.0}};

    std::vector<double> dist;
    dist.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int i = 1; i < n; ++i) {
        const double ri = i / grid.n_cols;
        const double ci = i % grid.n_cols;
        for (int j = 0; j < i; ++j) {
            const double rj = j / grid.n_cols;
            const double cj = j % grid.n_cols;
            dist.push_back(std::hypot(ri - rj, ci - cj));
        }
    }
    return rank_pairs(n, dist);
}

RankingMatrix feature_distance_ranking(std::span<const double> values, int rows, int n_features,
                                       FeatureRankMode mode) {
    if (n_features < 2) throw Error("feature_distance_ranking: need at least 2 features");
    if (rows < 1 || values.size() != static_cast<size_t>(rows) * n_features) {
        throw DimensionError("feature_distance_ranking: matrix shape mismatch");
    }

    std::vector<double> keys;
    keys.reserve(static_cast<size_t>(n_features) * (n_features - 1) / 2);
    for (int i = 1; i < n_features; ++i) {
        for (int j = 0; j < i; ++j) {
            double ss = 0.0;
            for (int r = 0; r < rows; ++r) {
                const double d = values[static_cast<size_t>(r) * n_features + i] -
                                 values[static_cast<size_t>(r) * n_features + j];
                ss += d * d;
            }
            const double dist = std::sqrt(ss);
            keys.push_back(mode == FeatureRankMode::Distance ? round10(dist)
                                                             : round10(1.0 - dist));
        }
    }
    return rank_pairs(n_features, keys);
}

double layout_loss(const RankingMatrix& R, const RankingMatrix& Q, const std::vector<int>& pi) {
    if (R.size != Q.size) throw DimensionError("layout_loss: R and Q differ in size");
    if (static_cast<int>(pi.size()) != R.size) {
        throw DimensionError("layout_loss: permutation size mismatch");
    }
    double loss = 0.0;
    for (int i = 1; i < R.size; ++i) {
        for (int j = 0; j < i; ++j) {
            const double d = R.at(i, j) - Q.at(pi[i], pi[j]);
            loss += d * d;
        }
    }
    return loss;
}

FeatureLayout optimize_layout(const RankingMatrix& R, const RankingMatrix& Q, uint64_t seed,
                              int max_sweeps, std::vector<double>* loss_trace) {
    if (R.size != Q.size) throw DimensionError("optimize_layout: R and Q differ in size");
    const int n = R.size;

    std::vector<int> pi(n);
    std::iota(pi.begin(), pi.end(), 0);
    std::vector<int> inv = pi;  // cell -> feature

    double loss = layout_loss(R, Q, pi);
    if (loss_trace) loss_trace->push_back(loss);

    std::vector<std::pair<int, int>> cell_pairs;
    cell_pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) cell_pairs.emplace_back(a, b);
    }

    Rng rng(seed);
    int sweeps = 0;
    while (sweeps < max_sweeps) {
        ++sweeps;
        rng.shuffle(cell_pairs);
        int accepted = 0;
        for (const auto& [a, b] : cell_pairs) {
            const int u = inv[a];
            const int v = inv[b];
            // Only pairs touching u or v change; Q symmetry keeps the (u,v)
            // term itself fixed under the swap.
            double delta = 0.0;
            for (int w = 0; w < n; ++w) {
                if (w == u || w == v) continue;
                const int cw = pi[w];
                const double ruw = R.at(u, w);
                const double rvw = R.at(v, w);
                const double qaw = Q.at(a, cw);
                const double qbw = Q.at(b, cw);
                delta += (ruw - qbw) * (ruw - qbw) - (ruw - qaw) * (ruw - qaw);
                delta += (rvw - qaw) * (rvw - qaw) - (rvw - qbw) * (rvw - qbw);
            }
            if (delta < 0.0) {
                pi[u] = b;
                pi[v] = a;
                inv[a] = v;
                inv[b] = u;
                loss += delta;
                ++accepted;
                if (loss_trace) loss_trace->push_back(loss);
            }
        }
        if (accepted == 0) break;
    }

    FeatureLayout out;
    out.grid = {0, 0, n};
    out.assignment = std::move(pi);
    out.loss = layout_loss(R, Q, out.assignment);  // exact, not the running sum
    out.seed = seed;
    out.sweeps_run = sweeps;
    return out;
}

std::vector<double> pad_row(std::span<const double> row, int n_features) {
    if (static_cast<int>(row.size()) > n_features) {
        throw DimensionError("pad_row: row longer than the padded feature count");
    }
    std::vector<double> out(row.begin(), row.end());
    out.resize(static_cast<size_t>(n_features), 0.5);
    return out;
}

CellGrid assemble_grid(std::span<const double> row, const FeatureLayout& layout) {
    const int n = layout.grid.n_features;
    if (static_cast<int>(row.size()) != n) {
        throw DimensionError("assemble_grid: row length " + std::to_string(row.size()) +
                             " != " + std::to_string(n) + " grid cells");
    }
    CellGrid g;
    g.n_rows = layout.grid.n_rows;
    g.n_cols = layout.grid.n_cols;
    g.cells.assign(static_cast<size_t>(n), 0.0);
    for (int f = 0; f < n; ++f) g.cells[static_cast<size_t>(layout.assignment[f])] = row[f];
    return g;
}

TabularImage tile_to_image(const CellGrid& grid) {
    if (grid.n_rows < 1 || grid.n_cols < 1 || grid.n_rows > kImageSide ||
        grid.n_cols > kImageSide) {
        throw DimensionError("tile_to_image: grid must be within 1..84 per side");
    }
    if (grid.cells.size() != static_cast<size_t>(grid.n_rows) * grid.n_cols) {
        throw DimensionError("tile_to_image: cell count mismatch");
    }
    for (const double v : grid.cells) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw NumericError("tile_to_image: cell values must lie in [0, 1]");
        }
    }
    const int t_r = kImageSide / grid.n_rows + 1;
    const int t_c = kImageSide / grid.n_cols + 1;
    TabularImage img;
    for (int y = 0; y < kImageSide; ++y) {
        const int gy = y / t_r;
        for (int x = 0; x < kImageSide; ++x) {
            const float v = static_cast<float>(grid.cells[static_cast<size_t>(gy) * grid.n_cols + x / t_c]);
            img.pixels.at(0, y, x) = v;
            img.pixels.at(1, y, x) = v;
            img.pixels.at(2, y, x) = v;
        }
    }
    return img;
}

FeatureLayout build_layout(const Dataset& ds, uint64_t seed, int max_sweeps,
                           FeatureRankMode mode) {
    if (ds.n_cols() == 0 || ds.n_rows() == 0) throw Error("build_layout: empty dataset");
    for (const double v : ds.values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw StateError("build_layout: dataset must be imputed and normalized first");
        }
    }
    const GridSpec grid = choose_grid(static_cast<int>(ds.n_cols()));

    FeatureLayout layout;
    if (grid.n_features == 1) {
        layout.assignment = {0};
        layout.seed = seed;
        layout.sweeps_run = 0;
    } else {
        const size_t rows = ds.n_rows();
        std::vector<double> padded(rows * static_cast<size_t>(grid.n_features), 0.5);
        for (size_t r = 0; r < rows; ++r) {
            for (size_t c = 0; c < ds.n_cols(); ++c) {
                padded[r * grid.n_features + c] = ds.at(r, c);
            }
        }
        const RankingMatrix R = feature_distance_ranking(padded, static_cast<int>(rows),
                                                         grid.n_features, mode);
        const RankingMatrix Q = pixel_distance_ranking(grid);
        layout = optimize_layout(R, Q, seed, max_sweeps);
    }
    layout.grid = grid;
    layout.rank_mode = mode;
    return layout;
}

TabularImage transform_row(const Dataset& ds, size_t row, const FeatureLayout& layout) {
    if (row >= ds.n_rows()) throw DimensionError("transform_row: row index out of range");
    std::vector<double> vals(ds.n_cols());
    for (size_t c = 0; c < ds.n_cols(); ++c) vals[c] = ds.at(row, c);
    const auto padded = pad_row(vals, layout.grid.n_features);
    TabularImage img = tile_to_image(assemble_grid(padded, layout));
    img.source_row = static_cast<int>(row);
    img.layout_id = layout.id();
    return img;
}

std::string layout_to_json(const FeatureLayout& layout) {
    nlohmann::json j;
    j["format"] = "fewtab-layout/1";
    j["grid"] = {{"rows", layout.grid.n_rows},
                 {"cols", layout.grid.n_cols},
                 {"features", layout.grid.n_features}};
    j["assignment"] = layout.assignment;
    j["loss"] = layout.loss;
    j["seed"] = layout.seed;
    j["sweeps_run"] = layout.sweeps_run;
    j["rank_mode"] = layout.rank_mode == FeatureRankMode::Distance ? "distance" : "one_minus_distance";
    return j.dump(2) + "\n";
}

FeatureLayout layout_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("layout_from_json: ") + e.what());
    }
    try {
        if (j.at("format") != "fewtab-layout/1") {
            throw FormatError("layout_from_json: unknown format tag");
        }
        FeatureLayout layout;
        layout.grid.n_rows = j.at("grid").at("rows").get<int>();
        layout.grid.n_cols = j.at("grid").at("cols").get<int>();
        layout.grid.n_features = j.at("grid").at("features").get<int>();
        layout.assignment = j.at("assignment").get<std::vector<int>>();
        layout.loss = j.at("loss").get<double>();
        layout.seed = j.at("seed").get<uint64_t>();
        layout.sweeps_run = j.at("sweeps_run").get<int>();
        const std::string mode = j.at("rank_mode").get<std::string>();
        if (mode == "distance") {
            layout.rank_mode = FeatureRankMode::Distance;
        } else if (mode == "one_minus_distance") {
            layout.rank_mode = FeatureRankMode::OneMinusDistance;
        } else {
            throw FormatError("layout_from_json: unknown rank_mode '" + mode + "'");
        }
        if (layout.grid.n_rows * layout.grid.n_cols != layout.grid.n_features ||
            static_cast<int>(layout.assignment.size()) != layout.grid.n_features) {
            throw FormatError("layout_from_json: inconsistent grid");
        }
        std::vector<bool> seen(layout.assignment.size(), false);
        for (const int cell : layout.assignment) {
            if (cell < 0 || cell >= layout.grid.n_features || seen[static_cast<size_t>(cell)]) {
                throw FormatError("layout_from_json: assignment is not a permutation");
            }
            seen[static_cast<size_t>(cell)] = true;
        }
        return layout;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("layout_from_json: ") + e.what());
    }
}

uint64_t FeatureLayout::id() const { return fnv1a64(layout_to_json(*this)); }

}  // namespace fewtab
