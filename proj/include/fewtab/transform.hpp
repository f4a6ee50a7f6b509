#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fewtab/common.hpp"
#include "fewtab/dataset.hpp"
#include "fewtab/image.hpp"

namespace fewtab {

/// Factor grid for placing N features; n_features is the count after padding,
/// always equal to n_rows * n_cols.
struct GridSpec {
    int n_rows = 0;
    int n_cols = 0;
    int n_features = 0;
};

/// Symmetric zero-diagonal matrix of average-tie ranks over all feature or
/// cell pairs. Lower-triangle ranks cover 1..P with ties averaged, P = N(N-1)/2.
struct RankingMatrix {
    int size = 0;
    std::vector<double> entries;  // size * size, row-major

    double at(int i, int j) const { return entries[static_cast<size_t>(i) * size + j]; }
    double& at(int i, int j) { return entries[static_cast<size_t>(i) * size + j]; }
};

/// How feature pairs are ordered before ranking. Distance ranks the most
/// similar pair first; OneMinusDistance ranks by 1 - d instead (the inverted
/// ordering), kept selectable for comparison runs.
enum class FeatureRankMode { Distance, OneMinusDistance };

/// Feature -> grid cell assignment found by the layout search.
struct FeatureLayout {
    GridSpec grid;
    std::vector<int> assignment;  // feature index -> row-major cell index
    double loss = 0.0;
    uint64_t seed = 0;
    int sweeps_run = 0;
    FeatureRankMode rank_mode = FeatureRankMode::Distance;

    uint64_t id() const;  // content hash, stamped on every image made with this layout
};

/// Values placed on the grid, row-major n_rows x n_cols.
struct CellGrid {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<double> cells;
};

struct TabularImage {
    Image pixels;  // 3 x 84 x 84, all channels identical
    int source_row = -1;
    uint64_t layout_id = 0;
};

/// Average-tie ranks (1-based) of `values`; equal values share the mean of
/// the positions they occupy.
std::vector<double> average_tie_ranks(const std::vector<double>& values);

/// Pick the grid for `n_features` columns: the divisor pair of the padded
/// count closest to square, rows <= cols <= 84. Prime counts above 3 are
/// padded upward until a pair with aspect ratio at most 3 exists.
GridSpec choose_grid(int n_features);

/// Rank matrix Q of Euclidean distances between grid cells, coordinates
/// (row, col) in row-major order.
RankingMatrix pixel_distance_ranking(const GridSpec& grid);

/// Rank matrix R of Euclidean distances between feature columns of a
/// rows x n_features matrix (row-major). Distances are rounded to 10 decimals
/// before ranking so ties are stable.
RankingMatrix feature_distance_ranking(std::span<const double> values, int rows, int n_features,
                                       FeatureRankMode mode = FeatureRankMode::Distance);

/// Alignment objective: sum over feature pairs i < j of
/// (R[i,j] - Q[pi(i), pi(j)])^2, each unordered pair counted once.
double layout_loss(const RankingMatrix& R, const RankingMatrix& Q, const std::vector<int>& pi);

/// Pairwise-swap hill climbing from the identity assignment. Each sweep
/// visits every unordered cell pair in a seed-shuffled order and swaps the
/// two features there whenever that strictly lowers the loss; stops after a
/// sweep with no accepted swap or after max_sweeps.
FeatureLayout optimize_layout(const RankingMatrix& R, const RankingMatrix& Q, uint64_t seed,
                              int max_sweeps = 50, std::vector<double>* loss_trace = nullptr);

/// Place one row's feature values on the layout's grid: cell pi(f) takes the
/// value of feature f. The row must already be padded to grid.n_features.
CellGrid assemble_grid(std::span<const double> row, const FeatureLayout& layout);

/// Blow the cell grid up to 84 x 84 by repeating each cell floor(84/n)+1
/// times per axis and cropping, then copy the plane to all three channels.
TabularImage tile_to_image(const CellGrid& grid);

/// Pad a row with 0.5-valued dummy features up to `n_features`.
std::vector<double> pad_row(std::span<const double> row, int n_features);

/// Grid choice + rankings + layout search for a normalized dataset,
/// all in one step. Dummy padding columns carry the constant 0.5.
FeatureLayout build_layout(const Dataset& ds, uint64_t seed, int max_sweeps = 50,
                           FeatureRankMode mode = FeatureRankMode::Distance);

/// Transform one dataset row with a previously built layout.
TabularImage transform_row(const Dataset& ds, size_t row, const FeatureLayout& layout);

/// JSON sidecar round trip for reproducible transforms.
std::string layout_to_json(const FeatureLayout& layout);
FeatureLayout layout_from_json(const std::string& text);

}  // namespace fewtab
