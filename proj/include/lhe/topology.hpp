// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/io.hpp"

namespace lhe {

struct PointCloud {
    std::vector<Vector> points;
    std::string source;
};

inline void validate_cloud(const PointCloud& cloud) {
    require(cloud.points.size() >= 2, ErrorKind::InsufficientData,
            "point cloud '" + cloud.source + "' needs at least two points");
    for (const auto& p : cloud.points)
        require(p.allFinite(), ErrorKind::NonFinite, "non-finite coordinates in '" + cloud.source + "'");
}

struct PersistenceFeature {
    double birth = 0;
    double death = 0;  // +inf for essential features
    int dim = 0;

    bool is_infinite() const { return std::isinf(death); }
};

struct PersistenceDiagram {
    std::vector<PersistenceFeature> features;

    std::vector<PersistenceFeature> finite_features(int dim) const {
        std::vector<PersistenceFeature> out;
        for (const auto& f : features)
            if (f.dim == dim && !f.is_infinite()) out.push_back(f);
        return out;
    }
    std::size_t infinite_count(int dim) const {
        std::size_t n = 0;
        for (const auto& f : features)
            if (f.dim == dim && f.is_infinite()) ++n;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Vietoris-Rips persistence (H0, H1) by boundary-matrix reduction over Z/2
// ---------------------------------------------------------------------------

struct RipsOptions {
    int max_dim = 1;                       // homology dimensions 0..max_dim
    double max_radius = 0;                 // 0 = enclosing diameter
    std::size_t simplex_budget = 5000000;  // memory guard
};

namespace detail {

struct Simplex {
    double diameter = 0;
    int dim = 0;
    std::array<int, 3> verts{-1, -1, -1};  // ascending; unused = -1
};

inline bool simplex_before(const Simplex& a, const Simplex& b) {
    if (a.diameter != b.diameter) return a.diameter < b.diameter;
    if (a.dim != b.dim) return a.dim < b.dim;
    return a.verts < b.verts;
}

inline std::uint64_t simplex_key(int dim, int a, int b = 0xffff, int c = 0xffff) {
    return (std::uint64_t(dim) << 48) | (std::uint64_t(std::uint16_t(a)) << 32) |
           (std::uint64_t(std::uint16_t(b)) << 16) | std::uint64_t(std::uint16_t(c));
}

}  // namespace detail

inline Matrix pairwise_distances(const PointCloud& cloud) {
    const auto n = static_cast<Eigen::Index>(cloud.points.size());
    Matrix d = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (cloud.points[static_cast<std::size_t>(i)] -
                              cloud.points[static_cast<std::size_t>(j)])
                                 .norm();
            d(i, j) = d(j, i) = v;
        }
    return d;
}

inline PersistenceDiagram rips_persistence(const PointCloud& cloud, const RipsOptions& opt = {}) {
    validate_cloud(cloud);
    require(opt.max_dim >= 0 && opt.max_dim <= 1, ErrorKind::InvalidArgument,
            "only homology dimensions 0 and 1 are supported");
    const int n = static_cast<int>(cloud.points.size());
    require(n <= 0xfffe, ErrorKind::InvalidArgument, "cloud too large for the simplex index");
    require(opt.max_radius >= 0, ErrorKind::InvalidArgument, "max_radius must be positive");
    const Matrix dist = pairwise_distances(cloud);
    double radius = opt.max_radius;
    if (radius <= 0) radius = dist.maxCoeff();  // enclosing diameter

    std::vector<detail::Simplex> simplices;
    for (int i = 0; i < n; ++i) simplices.push_back({0.0, 0, {i, -1, -1}});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (dist(i, j) <= radius) simplices.push_back({dist(i, j), 1, {i, j, -1}});
    if (opt.max_dim >= 1) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                if (dist(i, j) > radius) continue;
                for (int k = j + 1; k < n; ++k) {
                    const double diam = std::max({dist(i, j), dist(i, k), dist(j, k)});
                    if (diam <= radius) simplices.push_back({diam, 2, {i, j, k}});
                }
                require(simplices.size() <= opt.simplex_budget, ErrorKind::SimplexBudget,
                        "simplex count exceeds the configured budget; lower max_radius");
            }
    }
    require(simplices.size() <= opt.simplex_budget, ErrorKind::SimplexBudget,
            "simplex count exceeds the configured budget; lower max_radius");
    std::sort(simplices.begin(), simplices.end(), detail::simplex_before);

    std::unordered_map<std::uint64_t, std::size_t> index_of;
    index_of.reserve(simplices.size() * 2);
    for (std::size_t s = 0; s < simplices.size(); ++s) {
        const auto& sx = simplices[s];
        index_of[detail::simplex_key(sx.dim, sx.verts[0], sx.verts[1] < 0 ? 0xffff : sx.verts[1],
                                     sx.verts[2] < 0 ? 0xffff : sx.verts[2])] = s;
    }
    auto face_index = [&](int dim, int a, int b = -1) {
        return index_of.at(detail::simplex_key(dim, a, b < 0 ? 0xffff : b));
    };

    // columns hold facet row indices sorted ascending; low = back()
    std::vector<std::vector<std::size_t>> columns(simplices.size());
    for (std::size_t s = 0; s < simplices.size(); ++s) {
        const auto& sx = simplices[s];
        if (sx.dim == 1) {
            columns[s] = {face_index(0, sx.verts[0]), face_index(0, sx.verts[1])};
        } else if (sx.dim == 2) {
            columns[s] = {face_index(1, sx.verts[0], sx.verts[1]), face_index(1, sx.verts[0], sx.verts[2]),
                          face_index(1, sx.verts[1], sx.verts[2])};
        }
        std::sort(columns[s].begin(), columns[s].end());
    }

    std::unordered_map<std::size_t, std::size_t> pivot_of_low;
    pivot_of_low.reserve(simplices.size());
    std::vector<bool> is_destroyer(simplices.size(), false);
    PersistenceDiagram diagram;

    std::vector<std::size_t> merged;
    for (std::size_t s = 0; s < simplices.size(); ++s) {
        auto& col = columns[s];
        while (!col.empty()) {
            auto it = pivot_of_low.find(col.back());
            if (it == pivot_of_low.end()) break;
            // symmetric difference with the earlier column sharing this low
            const auto& other = columns[it->second];
            merged.clear();
            std::set_symmetric_difference(col.begin(), col.end(), other.begin(), other.end(),
                                          std::back_inserter(merged));
            col.swap(merged);
        }
        if (col.empty()) continue;  // creator
        const std::size_t low = col.back();
        pivot_of_low.emplace(low, s);
        is_destroyer[s] = true;
        const double birth = simplices[low].diameter;
        const double death = simplices[s].diameter;
        if (death > birth && simplices[low].dim <= opt.max_dim)
            diagram.features.push_back({birth, death, simplices[low].dim});
    }
    // essential creators: born, never destroyed
    for (std::size_t s = 0; s < simplices.size(); ++s) {
        if (is_destroyer[s] || pivot_of_low.count(s)) continue;
        const auto& sx = simplices[s];
        if (sx.dim > opt.max_dim) continue;
        diagram.features.push_back({sx.diameter, std::numeric_limits<double>::infinity(), sx.dim});
    }
    return diagram;
}

// ---------------------------------------------------------------------------
// H0 oracle: deaths are the MST edge weights of the complete Euclidean graph
// ---------------------------------------------------------------------------

inline PersistenceDiagram h0_via_mst(const PointCloud& cloud) {
    validate_cloud(cloud);
    const int n = static_cast<int>(cloud.points.size());
    const Matrix dist = pairwise_distances(cloud);
    std::vector<bool> in_tree(static_cast<std::size_t>(n), false);
    std::vector<double> best(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    in_tree[0] = true;
    for (int j = 1; j < n; ++j) best[static_cast<std::size_t>(j)] = dist(0, j);

    std::vector<double> weights;
    for (int added = 1; added < n; ++added) {
        int pick = -1;
        double w = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j)
            if (!in_tree[static_cast<std::size_t>(j)] && best[static_cast<std::size_t>(j)] < w) {
                w = best[static_cast<std::size_t>(j)];
                pick = j;
            }
        in_tree[static_cast<std::size_t>(pick)] = true;
        weights.push_back(w);
        for (int j = 0; j < n; ++j)
            if (!in_tree[static_cast<std::size_t>(j)])
                best[static_cast<std::size_t>(j)] = std::min(best[static_cast<std::size_t>(j)], dist(pick, j));
    }
    std::sort(weights.begin(), weights.end());

    PersistenceDiagram diagram;
    for (double w : weights)
        if (w > 0) diagram.features.push_back({0.0, w, 0});
    diagram.features.push_back({0.0, std::numeric_limits<double>::infinity(), 0});
    return diagram;
}

// ---------------------------------------------------------------------------
// Wasserstein distance between diagrams: optimal partial matching with
// diagonal projections, solved exactly on the augmented square cost matrix.
// ---------------------------------------------------------------------------

// Exact min-cost perfect matching (Hungarian algorithm with potentials).
inline double assignment_cost(const Matrix& cost) {
    const auto n = cost.rows();
    require(cost.cols() == n, ErrorKind::InvalidArgument, "assignment needs a square matrix");
    if (n == 0) return 0.0;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0), v(static_cast<std::size_t>(n) + 1, 0);
    std::vector<Eigen::Index> match(static_cast<std::size_t>(n) + 1, 0);  // column -> row (1-based)
    std::vector<Eigen::Index> way(static_cast<std::size_t>(n) + 1, 0);
    for (Eigen::Index i = 1; i <= n; ++i) {
        match[0] = i;
        Eigen::Index j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            const Eigen::Index i0 = match[static_cast<std::size_t>(j0)];
            double delta = inf;
            Eigen::Index j1 = 0;
            for (Eigen::Index j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (Eigen::Index j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0;
    for (Eigen::Index j = 1; j <= n; ++j)
        total += cost(match[static_cast<std::size_t>(j)] - 1, j - 1);
    return total;
}

// q-Wasserstein with the l-infinity ground metric. Infinite features are
// excluded from matching; they pair with each other at zero cost when both
// diagrams carry the same number of them.
inline double wasserstein(const PersistenceDiagram& d1, const PersistenceDiagram& d2, double q = 1.0) {
    require(q >= 1.0, ErrorKind::InvalidArgument, "wasserstein order must be >= 1");
    std::vector<PersistenceFeature> a, b;
    std::size_t inf_a = 0, inf_b = 0;
    for (const auto& f : d1.features) (f.is_infinite() ? (void)++inf_a : a.push_back(f));
    for (const auto& f : d2.features) (f.is_infinite() ? (void)++inf_b : b.push_back(f));
    if (inf_a != inf_b)
        std::cerr << "[lhe] diagrams carry different essential-feature counts (" << inf_a << " vs "
                  << inf_b << "); essential features are excluded from the distance\n";
    for (const auto& f : a)
        require(std::isfinite(f.birth) && std::isfinite(f.death), ErrorKind::NonFinite,
                "non-finite diagram feature");
    for (const auto& f : b)
        require(std::isfinite(f.birth) && std::isfinite(f.death), ErrorKind::NonFinite,
                "non-finite diagram feature");

    const auto n1 = static_cast<Eigen::Index>(a.size());
    const auto n2 = static_cast<Eigen::Index>(b.size());
    if (n1 == 0 && n2 == 0) return 0.0;
    const auto n = n1 + n2;
    Matrix cost(n, n);
    auto ground = [&](const PersistenceFeature& x, const PersistenceFeature& y) {
        return std::max(std::abs(x.birth - y.birth), std::abs(x.death - y.death));
    };
    auto to_diag = [&](const PersistenceFeature& x) { return (x.death - x.birth) / 2.0; };
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double c;
            if (i < n1 && j < n2)
                c = ground(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
            else if (i < n1)
                c = to_diag(a[static_cast<std::size_t>(i)]);
            else if (j < n2)
                c = to_diag(b[static_cast<std::size_t>(j)]);
            else
                c = 0.0;
            cost(i, j) = std::pow(c, q);
        }
    const double total = assignment_cost(cost);
    return std::pow(total, 1.0 / q);
}

// Per-dimension distances summed into one scalar per diagram pair.
inline double diagram_distance(const PersistenceDiagram& d1, const PersistenceDiagram& d2,
                               int max_dim = 1, double q = 1.0) {
    double total = 0;
    for (int dim = 0; dim <= max_dim; ++dim) {
        PersistenceDiagram a, b;
        a.features = d1.finite_features(dim);
        b.features = d2.finite_features(dim);
        total += wasserstein(a, b, q);
    }
    return total;
}

// ---------------------------------------------------------------------------
// similarity matrix over domains and baselines
// ---------------------------------------------------------------------------

struct SimilarityMatrix {
    std::vector<std::string> sources;
    Matrix distances;  // symmetric, zero diagonal
    bool log1p_display = false;
};

inline SimilarityMatrix similarity_matrix(const std::vector<PointCloud>& clouds,
                                          const RipsOptions& opt = {}, double q = 1.0) {
    require(clouds.size() >= 2, ErrorKind::InsufficientData, "need at least two sources");
    std::vector<PersistenceDiagram> diagrams;
    diagrams.reserve(clouds.size());
    for (const auto& c : clouds) diagrams.push_back(rips_persistence(c, opt));

    const auto n = static_cast<Eigen::Index>(clouds.size());
    SimilarityMatrix sm;
    sm.distances = Matrix::Zero(n, n);
    for (const auto& c : clouds) sm.sources.push_back(c.source);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = diagram_distance(diagrams[static_cast<std::size_t>(i)],
                                              diagrams[static_cast<std::size_t>(j)], opt.max_dim, q);
            sm.distances(i, j) = sm.distances(j, i) = d;
        }
    return sm;
}

// ---------------------------------------------------------------------------
// baseline clouds
// ---------------------------------------------------------------------------

// Lower median; deterministic for even counts.
inline std::size_t median_cloud_size(std::vector<std::size_t> sizes) {
    require(!sizes.empty(), ErrorKind::InvalidArgument, "no cloud sizes");
    std::sort(sizes.begin(), sizes.end());
    return sizes[(sizes.size() - 1) / 2];
}

// Representations of randomly sampled nouns, read directly from the subject
// layer.
inline PointCloud sample_baseline_cloud(const std::vector<std::string>& nouns, const Backend& backend,
                                        std::size_t n, int subject_layer, std::uint64_t seed,
                                        const std::string& source_tag) {
    require(!nouns.empty(), ErrorKind::InsufficientData, "empty noun list");
    require(nouns.size() >= n, ErrorKind::InsufficientData,
            "noun list smaller than the requested cloud size");
    Rng rng(seed ^ 0xa24baed4963ee407ULL);
    auto idx = rng.sample_without_replacement(nouns.size(), n);
    std::sort(idx.begin(), idx.end());
    PointCloud cloud;
    cloud.source = source_tag;
    for (auto i : idx) {
        const std::string& noun = nouns[i];
        ExtractionRequest req;
        req.prompt = noun;
        req.subject_begin = 0;
        req.subject_end = noun.size();
        req.object_text = noun;
        req.subject_layer = subject_layer;
        req.object_layer = subject_layer;
        cloud.points.push_back(backend.extract_sample(req).subject_vec);
    }
    return cloud;
}

}  // namespace lhe
