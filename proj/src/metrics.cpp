#include "fewtab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

namespace fewtab {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) {
        throw DimensionError("accuracy: prediction/label length mismatch");
    }
    if (predictions.empty()) throw DimensionError("accuracy: empty input");
    size_t hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: score/label length mismatch");
    if (scores.empty()) throw DimensionError("auc: empty input");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (const int y : labels) {
        if (y != 0 && y != 1) throw FormatError("auc: labels must be 0 or 1");
        n_pos += static_cast<size_t>(y);
    }
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw NumericError("auc undefined: only one class present");

    // rank-sum form; tie groups share the average rank, which reproduces the
    // pairwise statistic with ties at one half
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based mean of [i+1, j]
        for (size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_macro_ovr(const std::vector<std::vector<double>>& probabilities,
                     const std::vector<int>& labels) {
    if (probabilities.size() != labels.size()) {
        throw DimensionError("auc_macro_ovr: probability/label length mismatch");
    }
    if (probabilities.empty()) throw DimensionError("auc_macro_ovr: empty input");
    const size_t n_classes = probabilities.front().size();
    if (n_classes < 2) throw DimensionError("auc_macro_ovr: need at least 2 probability columns");
    for (const auto& row : probabilities) {
        if (row.size() != n_classes) throw DimensionError("auc_macro_ovr: ragged probability rows");
    }
    double total = 0.0;
    for (size_t c = 0; c < n_classes; ++c) {
        std::vector<double> col(labels.size());
        std::vector<int> ind(labels.size());
        bool seen = false;
        for (size_t r = 0; r < labels.size(); ++r) {
            col[r] = probabilities[r][c];
            ind[r] = labels[r] == static_cast<int>(c) ? 1 : 0;
            seen = seen || ind[r] == 1;
        }
        if (!seen) {
            throw NumericError("auc_macro_ovr: class " + std::to_string(c) + " absent from labels");
        }
        total += auc_binary(col, ind);
    }
    return total / static_cast<double>(n_classes);
}

CoverageResult domain_coverage(const std::vector<Point2>& natural_2d,
                               const std::vector<Point2>& tabular_2d) {
    if (natural_2d.empty()) throw NumericError("domain_coverage: empty natural point set");
    if (tabular_2d.empty()) throw NumericError("domain_coverage: empty tabular point set");

    CoverageResult res;
    for (const auto& p : natural_2d) {
        res.center[0] += p[0];
        res.center[1] += p[1];
    }
    res.center[0] /= static_cast<double>(natural_2d.size());
    res.center[1] /= static_cast<double>(natural_2d.size());

    for (const auto& p : natural_2d) {
        res.distance_max = std::max(res.distance_max,
                                    std::hypot(p[0] - res.center[0], p[1] - res.center[1]));
    }

    const double r1 = res.distance_max;
    const double r2 = 0.8 * res.distance_max;
    size_t in1 = 0;
    size_t in2 = 0;
    for (const auto& p : tabular_2d) {
        const double d = std::hypot(p[0] - res.center[0], p[1] - res.center[1]);
        if (d <= r1) ++in1;
        if (d <= r2) ++in2;
    }
    res.frac_inside_c1 = static_cast<double>(in1) / static_cast<double>(tabular_2d.size());
    res.frac_inside_c2 = static_cast<double>(in2) / static_cast<double>(tabular_2d.size());
    return res;
}

std::vector<Point2> project_2d(const std::vector<std::vector<double>>& latents) {
    const size_t n = latents.size();
    if (n < 2) throw NumericError("project_2d: need at least 2 points");
    const size_t d = latents.front().size();
    if (d == 0) throw DimensionError("project_2d: zero-dimensional points");
    for (const auto& row : latents) {
        if (row.size() != d) throw DimensionError("project_2d: ragged latent rows");
    }

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = latents[i][j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;

    // top-2 principal directions; the Gram matrix route keeps the eigenproblem
    // at n x n when the latent dimension dominates
    std::vector<Eigen::VectorXd> dirs;
    const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
    const double tiny = 1e-12 * scale * scale;
    if (d <= n) {
        const Eigen::MatrixXd cov = x.transpose() * x;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        for (int k = 0; k < 2; ++k) {
            const Eigen::Index idx = static_cast<Eigen::Index>(d) - 1 - k;
            if (idx < 0 || es.eigenvalues()(idx) <= tiny) {
                dirs.emplace_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)));
            } else {
                dirs.emplace_back(es.eigenvectors().col(idx));
            }
        }
    } else {
        const Eigen::MatrixXd gram = x * x.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        for (int k = 0; k < 2; ++k) {
            const Eigen::Index idx = static_cast<Eigen::Index>(n) - 1 - k;
            const double lambda = es.eigenvalues()(idx);
            if (lambda <= tiny) {
                dirs.emplace_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)));
            } else {
                Eigen::VectorXd v = x.transpose() * es.eigenvectors().col(idx);
                dirs.emplace_back(v / v.norm());
            }
        }
    }

    for (auto& v : dirs) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (std::abs(v(i)) > 1e-12) {
                if (v(i) < 0.0) v = -v;
                break;
            }
        }
    }

    std::vector<Point2> out(n);
    for (size_t i = 0; i < n; ++i) {
        out[i] = {x.row(static_cast<Eigen::Index>(i)).dot(dirs[0]),
                  x.row(static_cast<Eigen::Index>(i)).dot(dirs[1])};
    }
    return out;
}

}  // namespace fewtab
