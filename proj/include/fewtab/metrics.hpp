#pragma once

#include <array>
#include <vector>

#include "fewtab/common.hpp"

namespace fewtab {

using Point2 = std::array<double, 2>;

/// Circle coverage of tabular points against the natural-image cloud: c1 has
/// radius distance_max (the farthest natural point from the natural mean),
/// c2 has radius 0.8 * distance_max. Points on a boundary count as inside.
struct CoverageResult {
    Point2 center{0.0, 0.0};
    double distance_max = 0.0;
    double frac_inside_c1 = 0.0;
    double frac_inside_c2 = 0.0;
};

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half. Labels are 0/1; both classes must be present.
double auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

/// Macro one-vs-rest AUC over per-class probability columns.
double auc_macro_ovr(const std::vector<std::vector<double>>& probabilities,
                     const std::vector<int>& labels);

CoverageResult domain_coverage(const std::vector<Point2>& natural_2d,
                               const std::vector<Point2>& tabular_2d);

/// Centered projection onto the top-2 principal directions. The sign of each
/// direction is fixed so its first nonzero coordinate is positive.
std::vector<Point2> project_2d(const std::vector<std::vector<double>>& latents);

}  // namespace fewtab
