// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent oracles for the test suite. Oracles here
// deliberately re-derive results through a different route than the library
// code they check.
#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lhe/taxonomy.hpp"
#include "lhe/topology.hpp"
#include "lhe/toy_backend.hpp"

namespace lhe_test {

using lhe::HierarchyTree;
using lhe::Matrix;
using lhe::Vector;

// ---------------------------------------------------------------------------
// tree builders
// ---------------------------------------------------------------------------

inline lhe::ConceptNode node(std::string id, std::string label, int depth, std::string parent = "") {
    lhe::ConceptNode n;
    n.id = std::move(id);
    n.label = std::move(label);
    n.depth = depth;
    if (!parent.empty()) n.parent_id = parent;
    return n;
}

inline HierarchyTree tree_from_nodes(const std::string& domain, lhe::RelationKind kind,
                                     const std::vector<lhe::ConceptNode>& nodes) {
    nlohmann::json doc{{"domain", domain}, {"relation_kind", lhe::to_string(kind)}, {"nodes", nlohmann::json::array()}};
    for (const auto& n : nodes) {
        nlohmann::json jn{{"id", n.id}, {"label", n.label}, {"depth", n.depth}};
        jn["parent_id"] = n.parent_id ? nlohmann::json(*n.parent_id) : nlohmann::json(nullptr);
        doc["nodes"].push_back(jn);
    }
    return lhe::hierarchy_from_json(doc, domain);
}

// root -> n_parents depth-1 nodes -> n_children leaves under each parent
inline HierarchyTree flat_tree(const std::string& domain, int n_parents, int n_children,
                               lhe::RelationKind kind = lhe::RelationKind::PartOf,
                               const std::string& prefix = "") {
    std::vector<lhe::ConceptNode> nodes;
    const std::string p = prefix.empty() ? domain : prefix;
    nodes.push_back(node(p + "root", p + "root", 0));
    for (int i = 0; i < n_parents; ++i) {
        const std::string pid = p + "p" + std::to_string(i);
        nodes.push_back(node(pid, pid, 1, p + "root"));
        for (int j = 0; j < n_children; ++j) {
            const std::string cid = p + "c" + std::to_string(i) + "x" + std::to_string(j);
            nodes.push_back(node(cid, cid, 2, pid));
        }
    }
    return tree_from_nodes(domain, kind, nodes);
}

// A miniature location-style tree with a multi-token label and named places.
inline HierarchyTree location_tree() {
    std::vector<lhe::ConceptNode> nodes{
        node("world", "World", 0),
        node("europe", "Europe", 1, "world"),
        node("asia", "Asia", 1, "world"),
        node("france", "France", 2, "europe"),
        node("germany", "Germany", 2, "europe"),
        node("japan", "Japan", 2, "asia"),
        node("easia", "Eastern Asia", 2, "asia"),
        node("paris", "Paris", 3, "france"),
        node("lyon", "Lyon", 3, "france"),
        node("berlin", "Berlin", 3, "germany"),
        node("munich", "Munich", 3, "germany"),
        node("osaka", "Osaka", 3, "japan"),
        node("tokyo", "Tokyo", 3, "japan"),
        node("sendai", "Sendai", 3, "easia"),
        node("sapporo", "Sapporo", 3, "easia"),
    };
    return tree_from_nodes("locations", lhe::RelationKind::PartOf, nodes);
}

inline lhe::Triple triple_for(const HierarchyTree& tree, const std::string& subject) {
    for (const auto& t : lhe::derive_triples(tree))
        if (t.subject_id == subject) return t;
    lhe::fail(lhe::ErrorKind::OrphanNode, "no triple for " + subject);
}

// ---------------------------------------------------------------------------
// persistence oracle: dense Z/2 reduction written from scratch
// ---------------------------------------------------------------------------

struct OracleFeature {
    double birth, death;  // death = inf for essential
    int dim;
};

inline std::vector<OracleFeature> naive_rips(const std::vector<Vector>& points, double max_radius = 0) {
    const int n = static_cast<int>(points.size());
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0));
    double diameter = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            d[i][j] = (points[i] - points[j]).norm();
            diameter = std::max(diameter, d[i][j]);
        }
    const double radius = max_radius > 0 ? max_radius : diameter;

    struct S {
        double diam;
        int dim;
        std::vector<int> verts;
    };
    std::vector<S> simplices;
    for (int i = 0; i < n; ++i) simplices.push_back({0, 0, {i}});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (d[i][j] <= radius) simplices.push_back({d[i][j], 1, {i, j}});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (int k = j + 1; k < n; ++k) {
                const double diam = std::max({d[i][j], d[i][k], d[j][k]});
                if (diam <= radius) simplices.push_back({diam, 2, {i, j, k}});
            }
    std::sort(simplices.begin(), simplices.end(), [](const S& a, const S& b) {
        if (a.diam != b.diam) return a.diam < b.diam;
        if (a.dim != b.dim) return a.dim < b.dim;
        return a.verts < b.verts;
    });

    auto find_index = [&](const std::vector<int>& verts) {
        for (std::size_t s = 0; s < simplices.size(); ++s)
            if (simplices[s].verts == verts) return s;
        throw std::logic_error("face not found");
    };

    std::vector<std::set<std::size_t>> cols(simplices.size());
    for (std::size_t s = 0; s < simplices.size(); ++s) {
        const auto& v = simplices[s].verts;
        if (simplices[s].dim == 1) {
            cols[s] = {find_index({v[0]}), find_index({v[1]})};
        } else if (simplices[s].dim == 2) {
            cols[s] = {find_index({v[0], v[1]}), find_index({v[0], v[2]}), find_index({v[1], v[2]})};
        }
    }

    std::map<std::size_t, std::size_t> pivot;
    std::vector<bool> destroyer(simplices.size(), false);
    std::vector<OracleFeature> features;
    for (std::size_t s = 0; s < simplices.size(); ++s) {
        auto& col = cols[s];
        while (!col.empty() && pivot.count(*col.rbegin())) {
            const auto& other = cols[pivot.at(*col.rbegin())];
            for (auto r : other) {
                if (col.count(r))
                    col.erase(r);
                else
                    col.insert(r);
            }
        }
        if (col.empty()) continue;
        const std::size_t low = *col.rbegin();
        pivot[low] = s;
        destroyer[s] = true;
        if (simplices[s].diam > simplices[low].diam && simplices[low].dim <= 1)
            features.push_back({simplices[low].diam, simplices[s].diam, simplices[low].dim});
    }
    for (std::size_t s = 0; s < simplices.size(); ++s)
        if (!destroyer[s] && !pivot.count(s) && simplices[s].dim <= 1)
            features.push_back({simplices[s].diam, std::numeric_limits<double>::infinity(),
                                simplices[s].dim});
    return features;
}

// ---------------------------------------------------------------------------
// brute-force diagram matching (small diagrams only)
// ---------------------------------------------------------------------------

inline double brute_force_wasserstein(std::vector<std::pair<double, double>> a,
                                      std::vector<std::pair<double, double>> b, double q = 1.0) {
    const auto ground = [&](const std::pair<double, double>& x, const std::pair<double, double>& y) {
        return std::max(std::abs(x.first - y.first), std::abs(x.second - y.second));
    };
    const auto diag = [](const std::pair<double, double>& x) { return (x.second - x.first) / 2.0; };

    double best = std::numeric_limits<double>::infinity();
    std::vector<bool> used(b.size(), false);
    // recursive enumeration: each a-point matches some unused b-point or the diagonal
    std::function<void(std::size_t, double)> rec = [&](std::size_t i, double acc) {
        if (acc >= best) return;
        if (i == a.size()) {
            double total = acc;
            for (std::size_t j = 0; j < b.size(); ++j)
                if (!used[j]) total += std::pow(diag(b[j]), q);
            best = std::min(best, total);
            return;
        }
        rec(i + 1, acc + std::pow(diag(a[i]), q));
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (used[j]) continue;
            used[j] = true;
            rec(i + 1, acc + std::pow(ground(a[i], b[j]), q));
            used[j] = false;
        }
    };
    rec(0, 0.0);
    return std::pow(best, 1.0 / q);
}

// ---------------------------------------------------------------------------
// silhouette score (2-D projections)
// ---------------------------------------------------------------------------

inline double silhouette(const Matrix& coords, const std::vector<std::string>& labels) {
    const auto n = coords.rows();
    double total = 0;
    int counted = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::map<std::string, std::pair<double, int>> by_label;  // sum dist, count
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            auto& acc = by_label[labels[static_cast<std::size_t>(j)]];
            acc.first += (coords.row(i) - coords.row(j)).norm();
            acc.second += 1;
        }
        const std::string& own = labels[static_cast<std::size_t>(i)];
        if (!by_label.count(own) || by_label.size() < 2) continue;
        const double a = by_label[own].first / by_label[own].second;
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, acc] : by_label)
            if (label != own) b = std::min(b, acc.first / acc.second);
        total += (b - a) / std::max(a, b);
        counted += 1;
    }
    return counted ? total / counted : 0.0;
}

// ---------------------------------------------------------------------------
// forward-pass oracle for toy steering outcomes
// ---------------------------------------------------------------------------

struct SteerOracleInput {
    std::string subject_node;
    std::string source_parent;
    std::string target_parent;
    std::string source_label;
    std::string target_label;
    Vector v_source;  // concept directions used by the intervention
    Vector v_target;
    double beta = 1.0;
};

// Recomputes the edited readout and candidate scores directly from the
// planted step matrices and unembeddings.
inline bool oracle_steered_success(const lhe::ToyModel& toy,
                                   const std::vector<const HierarchyTree*>& trees,
                                   const SteerOracleInput& in) {
    const int L = toy.layer_count();
    const Vector dir = in.v_target - in.v_source;

    std::vector<Vector> noisy{toy.node_vector(in.subject_node)};
    std::vector<Vector> edited{noisy[0] + in.beta * noisy[0].norm() * dir};
    std::vector<Vector> clean{toy.prototype(in.source_parent)};
    for (int l = 1; l <= L; ++l) {
        noisy.push_back(toy.step_matrix(l) * noisy.back() + toy.step_bias(l));
        Vector e = toy.step_matrix(l) * edited.back() + toy.step_bias(l);
        edited.push_back(e + in.beta * e.norm() * dir);
        clean.push_back(toy.step_matrix(l) * clean.back() + toy.step_bias(l));
    }
    const Vector z = clean[static_cast<std::size_t>(L)] +
                     (toy.step_matrix(L) * edited[static_cast<std::size_t>(L - 1)] -
                      toy.step_matrix(L) * noisy[static_cast<std::size_t>(L - 1)]);

    // token readout rebuilt from labels and unembeddings
    std::map<std::string, Vector> token_readout;
    for (const auto* tree : trees)
        for (const auto& [id, n] : tree->nodes)
            for (const auto& tok : lhe::split_whitespace(n.label)) {
                auto [it, fresh] = token_readout.emplace(tok, Vector::Zero(z.size()));
                (void)fresh;
                it->second += toy.unembedding(id);
            }
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& [tok, r] : token_readout) mx = std::max(mx, r.dot(z));
    double total = 0;
    std::map<std::string, double> prob;
    for (const auto& [tok, r] : token_readout) {
        prob[tok] = std::exp(r.dot(z) - mx);
        total += prob[tok];
    }
    for (auto& [tok, p] : prob) p /= total;
    auto score = [&](const std::string& label) {
        double mn = std::numeric_limits<double>::infinity();
        for (const auto& tok : lhe::split_whitespace(label))
            mn = std::min(mn, prob.count(tok) ? prob.at(tok) : 0.0);
        return mn;
    };
    return score(in.target_label) > score(in.source_label);
}

}  // namespace lhe_test
