// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "lhe/common.hpp"
#include "lhe/encoder.hpp"
#include "lhe/sampling.hpp"

namespace lhe {

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

struct SweepCurve {
    std::string parameter;  // "rank" | "subject_layer" | "object_layer"
    std::vector<double> grid;
    std::vector<double> accuracy;
    std::vector<double> causality;
    double argmax_value = 0;  // grid value maximizing (accuracy + causality) / 2

    void finalize() {
        require(!grid.empty(), ErrorKind::InvalidArgument, "empty sweep grid");
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double caus = std::isnan(causality[i]) ? 0.0 : causality[i];
            const double mean = 0.5 * (accuracy[i] + caus);
            if (mean > best) {
                best = mean;
                argmax_value = grid[i];
            }
        }
    }
};

inline void check_grid_strictly_increasing(const std::vector<int>& grid) {
    require(!grid.empty(), ErrorKind::InvalidArgument, "empty sweep grid");
    for (std::size_t i = 1; i < grid.size(); ++i)
        require(grid[i] > grid[i - 1], ErrorKind::InvalidArgument, "sweep grid must strictly increase");
}

// Rank sweep over one relation: re-truncates the map's stored SVD factors,
// rebuilds concept vectors, and scores the eval side at each rank.
inline SweepCurve sweep_rank(const LinearRelationalMap& map, const std::vector<int>& grid,
                             const RelationEvalSet& set, const Backend* backend,
                             const ScoreOptions& opt) {
    check_grid_strictly_increasing(grid);
    SweepCurve curve;
    curve.parameter = "rank";
    for (int k : grid) {
        const auto entries = lhe_concepts(map, k, set);  // degenerate-rank error surfaces here
        const EvalOutcome o = score_dictionary(entries, set, backend, opt);
        curve.grid.push_back(double(k));
        curve.accuracy.push_back(o.accuracy);
        curve.causality.push_back(o.causality);
    }
    curve.finalize();
    return curve;
}

enum class LayerAxis { Subject, Object };

// One full estimate+eval cycle per grid value. The callback owns sample
// collection so remote/dump backends can batch however they like.
using LayerEvaluator = std::function<EvalOutcome(int subject_layer, int object_layer)>;

inline SweepCurve sweep_layers(LayerAxis axis, const std::vector<int>& grid, int fixed_layer,
                               const LayerEvaluator& evaluate) {
    check_grid_strictly_increasing(grid);
    SweepCurve curve;
    curve.parameter = axis == LayerAxis::Subject ? "subject_layer" : "object_layer";
    for (int l : grid) {
        const int ls = axis == LayerAxis::Subject ? l : fixed_layer;
        const int lo = axis == LayerAxis::Subject ? fixed_layer : l;
        const EvalOutcome o = evaluate(ls, lo);
        curve.grid.push_back(double(l));
        curve.accuracy.push_back(o.accuracy);
        curve.causality.push_back(o.causality);
    }
    curve.finalize();
    return curve;
}

// ---------------------------------------------------------------------------
// cross-domain transfer
// ---------------------------------------------------------------------------

struct TransferMatrix {
    std::vector<std::string> domains;  // train axis == test axis
    Matrix accuracy;                   // NaN where no depth-matched relation exists
    Matrix causality;
};

// Per-domain inputs for one depth-aligned relation family. Relations are
// aligned across domains by (child_depth, parent_depth).
struct TransferDomain {
    std::string name;
    std::map<std::pair<int, int>, LinearRelationalMap> maps;      // by depth pair
    std::map<std::pair<int, int>, RelationEvalSet> eval_sets;     // by depth pair
    const Backend* backend = nullptr;
};

inline TransferMatrix transfer_matrix(const std::vector<TransferDomain>& domains, int rank,
                                      const ScoreOptions& opt) {
    const auto n = static_cast<Eigen::Index>(domains.size());
    TransferMatrix tm;
    tm.accuracy = Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    tm.causality = Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    for (const auto& d : domains) tm.domains.push_back(d.name);

    for (Eigen::Index train = 0; train < n; ++train) {
        for (Eigen::Index test = 0; test < n; ++test) {
            double acc_sum = 0, caus_sum = 0;
            int acc_n = 0, caus_n = 0;
            for (const auto& [depths, map] : domains[static_cast<std::size_t>(train)].maps) {
                const auto& sets = domains[static_cast<std::size_t>(test)].eval_sets;
                auto it = sets.find(depths);
                if (it == sets.end()) continue;  // no depth-matched relation for this pair
                const int k = std::min<int>(rank, static_cast<int>(map.S.size()));
                const auto entries = lhe_concepts(map, k, it->second);
                const EvalOutcome o = score_dictionary(
                    entries, it->second, domains[static_cast<std::size_t>(test)].backend, opt);
                acc_sum += o.accuracy;
                ++acc_n;
                if (!std::isnan(o.causality)) {
                    caus_sum += o.causality;
                    ++caus_n;
                }
            }
            if (acc_n > 0) tm.accuracy(test, train) = acc_sum / acc_n;
            if (caus_n > 0) tm.causality(test, train) = caus_sum / caus_n;
        }
    }
    return tm;
}

// ---------------------------------------------------------------------------
// subspace overlap
// ---------------------------------------------------------------------------

struct SubspaceOverlap {
    std::string a;
    std::string b;
    int rank = 0;
    double value = 0;
};

// overlap = ||V_A^T V_B||_F^2 / r over two column-orthonormal bases.
inline double subspace_overlap_from_bases(const Matrix& va, const Matrix& vb) {
    require(va.rows() == vb.rows(), ErrorKind::WidthMismatch, "subspace bases live in different spaces");
    require(va.cols() == vb.cols() && va.cols() >= 1, ErrorKind::InvalidArgument,
            "subspace bases must share the rank r >= 1");
    return (va.transpose() * vb).squaredNorm() / double(va.cols());
}

inline SubspaceOverlap subspace_overlap(const LinearRelationalMap& a, const LinearRelationalMap& b,
                                        int r) {
    require(a.d_s() == b.d_s(), ErrorKind::WidthMismatch, "maps have different subject widths");
    require(r >= 1 && r <= a.S.size() && r <= b.S.size(), ErrorKind::InvalidArgument,
            "overlap rank exceeds available factors");
    require(a.S(r - 1) > 1e-10 * a.S(0) && b.S(r - 1) > 1e-10 * b.S(0), ErrorKind::DegenerateRank,
            "overlap rank exceeds a map's numerical rank");
    SubspaceOverlap o;
    o.a = a.relation.key();
    o.b = b.relation.key();
    o.rank = r;
    o.value = subspace_overlap_from_bases(a.V.leftCols(r), b.V.leftCols(r));
    return o;
}

// ---------------------------------------------------------------------------
// PCA export
// ---------------------------------------------------------------------------

struct PcaResult {
    Matrix coordinates;               // n x k
    Matrix components;                // d x k, sign-fixed
    std::vector<double> explained_variance_ratio;
};

inline PcaResult pca_project(const std::vector<Vector>& points, int n_components = 2) {
    require(static_cast<int>(points.size()) > n_components && n_components >= 1,
            ErrorKind::InsufficientData, "need more points than components");
    const auto n = static_cast<Eigen::Index>(points.size());
    const auto d = points.front().size();
    Matrix data(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        require(points[static_cast<std::size_t>(i)].size() == d, ErrorKind::WidthMismatch,
                "points have mixed widths");
        data.row(i) = points[static_cast<std::size_t>(i)].transpose();
    }
    const Vector mean = data.colwise().mean().transpose();
    data.rowwise() -= mean.transpose();

    Eigen::BDCSVD<Matrix> svd(data, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    Matrix comps = svd.matrixV().leftCols(n_components);
    // sign convention: largest-magnitude loading entry is positive
    for (Eigen::Index c = 0; c < comps.cols(); ++c) {
        Eigen::Index arg = 0;
        comps.col(c).cwiseAbs().maxCoeff(&arg);
        if (comps(arg, c) < 0) comps.col(c) = -comps.col(c);
    }

    PcaResult out;
    out.components = comps;
    out.coordinates = data * comps;
    const double total = sv.squaredNorm();
    for (int c = 0; c < n_components; ++c)
        out.explained_variance_ratio.push_back(total > 0 ? sv(c) * sv(c) / total : 0.0);
    return out;
}

}  // namespace lhe
