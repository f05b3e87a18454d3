// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/encoder.hpp"
#include "lhe/taxonomy.hpp"

namespace lhe {

enum class Method { Lhe, InputAveraging, MaxMargin };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::Lhe: return "lhe";
        case Method::InputAveraging: return "input-averaging";
        case Method::MaxMargin: return "max-margin";
    }
    return "?";
}

// One metric observation; "relation" is a relation key or "ALL" for the
// domain-level aggregate (mean over hierarchical levels).
struct MetricRow {
    std::string relation;
    std::string domain;
    std::string method;
    std::string metric;
    double value = 0;
    std::uint64_t seed = 0;
};

struct EvalReport {
    std::vector<MetricRow> rows;

    void add(const std::string& relation, const std::string& domain, const std::string& method,
             const std::string& metric, double value, std::uint64_t seed) {
        rows.push_back({relation, domain, method, metric, value, seed});
    }
};

struct LabeledSubject {
    Vector a;
    std::string gold_parent;
    std::string triple_id;
};

// ---------------------------------------------------------------------------
// predict_parent / accuracy / chance correction
// ---------------------------------------------------------------------------

inline std::string predict_parent(const Vector& a,
                                  const std::map<std::string, ConceptVector>& relation_entries) {
    require(!relation_entries.empty(), ErrorKind::InvalidArgument, "empty concept set");
    std::string best;
    double best_score = -std::numeric_limits<double>::infinity();
    bool tie = false;
    for (const auto& [parent, cv] : relation_entries) {  // ascending parent id
        const double s = cv.v.dot(a);
        if (s > best_score) {
            best_score = s;
            best = parent;
            tie = false;
        } else if (s == best_score) {
            tie = true;
        }
    }
    if (tie) std::cerr << "[lhe] inner-product tie; keeping lexicographically first parent '" << best << "'\n";
    return best;
}

inline std::string predict_parent(const Vector& a, const ConceptDictionary& dict,
                                  const RelationId& relation) {
    return predict_parent(a, dict.relation_entries(relation));
}

inline double accuracy(const std::vector<LabeledSubject>& subjects,
                       const std::map<std::string, ConceptVector>& relation_entries) {
    require(!subjects.empty(), ErrorKind::InsufficientData, "no test subjects");
    int correct = 0;
    for (const auto& s : subjects)
        if (predict_parent(s.a, relation_entries) == s.gold_parent) ++correct;
    return double(correct) / double(subjects.size());
}

inline double chance_corrected_accuracy(double raw, int candidate_parents) {
    require(candidate_parents >= 2, ErrorKind::UndefinedChance,
            "chance correction needs at least two candidate parents");
    const double chance = 1.0 / double(candidate_parents);
    return std::max(-1.0, (raw - chance) / (1.0 - chance));
}

// ---------------------------------------------------------------------------
// causality
// ---------------------------------------------------------------------------

struct InterventionCase {
    Triple triple;
    std::string source_parent;  // the gold parent c
    std::string target_parent;  // c', same relation, != c
    double beta = 1.0;
    bool success = false;
    double pre_source = 0, pre_target = 0;    // candidate scores before the edit
    double post_source = 0, post_target = 0;  // and after
};

// A prepared prompt for steering one test triple.
struct CausalityProbe {
    Triple triple;
    std::string prompt;
    std::size_t subject_begin = 0;
    std::size_t subject_end = 0;
    std::string source_label;
    std::string target_label;  // filled in when the target is drawn
};

inline void causal_intervention(InterventionCase& c, const ConceptDictionary& dict,
                                const Backend& backend, const CausalityProbe& probe) {
    require(backend.capabilities().steering, ErrorKind::CapabilityMissing,
            "backend '" + backend.model_name() + "' cannot steer");
    require(c.target_parent != c.source_parent, ErrorKind::InvalidArgument,
            "intervention target equals the source parent");
    const auto& entries = dict.relation_entries(c.triple.relation);
    auto src = entries.find(c.source_parent);
    auto tgt = entries.find(c.target_parent);
    require(src != entries.end() && tgt != entries.end(), ErrorKind::InvalidArgument,
            "intervention parents lack concept vectors");

    const std::vector<std::string> candidates{probe.source_label, probe.target_label};
    const auto pre = backend.next_token_distribution(probe.prompt, candidates);
    EditRequest edit;
    edit.direction = tgt->second.v - src->second.v;
    edit.beta = c.beta;
    edit.subject_begin = probe.subject_begin;
    edit.subject_end = probe.subject_end;
    const auto post = backend.steered_distribution(probe.prompt, edit, candidates);
    c.pre_source = pre[0].score;
    c.pre_target = pre[1].score;
    c.post_source = post[0].score;
    c.post_target = post[1].score;
    c.success = c.post_target > c.post_source;
}

inline double causality_score(const std::vector<InterventionCase>& cases) {
    require(!cases.empty(), ErrorKind::InsufficientData, "no intervention cases");
    int wins = 0;
    for (const auto& c : cases) wins += c.success ? 1 : 0;
    return double(wins) / double(cases.size());
}

// Draws the target parent uniformly among same-relation parents != source.
inline std::string draw_target_parent(const std::map<std::string, ConceptVector>& entries,
                                      const std::string& source, Rng& rng) {
    std::vector<std::string> pool;
    for (const auto& [parent, _] : entries)
        if (parent != source) pool.push_back(parent);
    require(!pool.empty(), ErrorKind::InvalidArgument, "no alternative parent to steer toward");
    return pool[rng.below(pool.size())];
}

// ---------------------------------------------------------------------------
// input-averaging baseline
// ---------------------------------------------------------------------------

inline std::map<std::string, ConceptVector> input_averaging_baseline(
    const std::map<std::string, std::vector<Vector>>& subject_vecs_by_parent,
    const RelationId& relation) {
    std::map<std::string, ConceptVector> out;
    for (const auto& [parent, vecs] : subject_vecs_by_parent) {
        require(!vecs.empty(), ErrorKind::InsufficientData, "empty child group for parent " + parent);
        Vector acc = Vector::Zero(vecs.front().size());
        for (const auto& v : vecs) acc += v;
        acc /= double(vecs.size());
        const double nrm = acc.norm();
        require(nrm >= 1e-12, ErrorKind::DegenerateConcept, "mean child vector collapsed for " + parent);
        out.emplace(parent, ConceptVector{relation, parent, acc / nrm, static_cast<int>(vecs.size())});
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear max-margin baseline (one-vs-rest hinge loss, subgradient descent)
// ---------------------------------------------------------------------------

struct MaxMarginConfig {
    double l2 = 1e-3;
    int epochs = 200;
    double step = 1e-2;
    std::uint64_t seed = 0;
    double leak_fraction = 0.2;  // share of test data folded into training
};

struct MaxMarginModel {
    std::vector<std::string> classes;
    Matrix weights;  // n_classes x d
    Vector offsets;  // n_classes

    std::string predict(const Vector& a) const {
        Eigen::Index best = 0;
        (weights * a + offsets).maxCoeff(&best);
        return classes[static_cast<std::size_t>(best)];
    }

    // normalized per-class weight rows double as concept directions
    std::map<std::string, ConceptVector> directions(const RelationId& relation) const {
        std::map<std::string, ConceptVector> out;
        for (std::size_t k = 0; k < classes.size(); ++k) {
            Vector w = weights.row(static_cast<Eigen::Index>(k)).transpose();
            const double nrm = w.norm();
            require(nrm >= 1e-12, ErrorKind::DegenerateConcept,
                    "zero max-margin direction for class " + classes[k]);
            out.emplace(classes[k], ConceptVector{relation, classes[k], w / nrm, 0});
        }
        return out;
    }
};

inline MaxMarginModel maxmargin_baseline(const std::vector<std::pair<Vector, std::string>>& examples,
                                         const MaxMarginConfig& cfg) {
    require(!examples.empty(), ErrorKind::InsufficientData, "no training examples");
    std::map<std::string, int> class_index;
    for (const auto& [_, label] : examples) class_index.emplace(label, 0);
    require(class_index.size() >= 2, ErrorKind::InvalidArgument,
            "max-margin training needs at least two classes");
    MaxMarginModel model;
    for (auto& [label, idx] : class_index) {
        idx = static_cast<int>(model.classes.size());
        model.classes.push_back(label);
    }
    const auto d = examples.front().first.size();
    const auto n_classes = static_cast<Eigen::Index>(model.classes.size());
    model.weights = Matrix::Zero(n_classes, d);
    model.offsets = Vector::Zero(n_classes);

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed ^ 0xc13fa9a902a6328fULL);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (auto i : order) {
            const Vector& x = examples[i].first;
            const int y = class_index.at(examples[i].second);
            for (Eigen::Index k = 0; k < n_classes; ++k) {
                const double sign = (k == y) ? 1.0 : -1.0;
                const double margin = sign * (model.weights.row(k).dot(x) + model.offsets(k));
                model.weights.row(k) *= (1.0 - cfg.step * cfg.l2);
                if (margin < 1.0) {
                    model.weights.row(k) += cfg.step * sign * x.transpose();
                    model.offsets(k) += cfg.step * sign;
                }
            }
        }
    }
    return model;
}

// Deterministic selection of the leaked test subset.
inline std::vector<std::size_t> leak_indices(std::size_t test_size, double fraction, std::uint64_t seed) {
    Rng rng(seed ^ 0x8e51ecf3a7d012bbULL);
    const auto want = static_cast<std::size_t>(fraction * double(test_size) + 0.5);
    auto idx = rng.sample_without_replacement(test_size, want);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace lhe
