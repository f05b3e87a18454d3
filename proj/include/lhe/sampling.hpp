// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/encoder.hpp"
#include "lhe/eval.hpp"
#include "lhe/taxonomy.hpp"

namespace lhe {

inline std::map<std::string, std::vector<Triple>> group_by_relation(const std::vector<Triple>& triples) {
    std::map<std::string, std::vector<Triple>> out;
    for (const auto& t : triples) out[t.relation.key()].push_back(t);
    return out;
}

struct CollectOptions {
    int subject_layer = 0;
    int object_layer = 0;
    bool with_jacobian = false;
    JacobianMethod jacobian_method = JacobianMethod::Analytic;
    PromptSpec prompt_spec;
};

struct CollectedSample {
    Triple triple;
    SubjectObjectSample sample;
    RenderedPrompt prompt;
};

inline CollectedSample collect_one(const Backend& backend, const HierarchyTree& tree, const Triple& t,
                                   const CollectOptions& opt) {
    CollectedSample cs;
    cs.triple = t;
    cs.prompt = render_prompt(t, opt.prompt_spec, tree);
    ExtractionRequest req;
    req.prompt = cs.prompt.text;
    req.subject_begin = cs.prompt.subject_begin;
    req.subject_end = cs.prompt.subject_end;
    req.object_text = cs.prompt.answer_text;
    req.subject_layer = opt.subject_layer;
    req.object_layer = opt.object_layer;
    req.triple_id = t.id();
    cs.sample = backend.extract_sample(req);
    cs.sample.triple_ref = t;
    if (opt.with_jacobian) {
        auto [jac, bias] = backend.jacobian_bias(req, opt.jacobian_method);
        cs.sample.jacobian = std::move(jac);
        cs.sample.bias = std::move(bias);
        validate_sample(cs.sample);
    }
    return cs;
}

inline std::vector<CollectedSample> collect_samples(const Backend& backend, const HierarchyTree& tree,
                                                    const std::vector<Triple>& triples,
                                                    const CollectOptions& opt) {
    std::vector<CollectedSample> out;
    out.reserve(triples.size());
    for (const auto& t : triples) out.push_back(collect_one(backend, tree, t, opt));
    return out;
}

// Everything needed to score one relation on its held-out side.
struct RelationEvalSet {
    RelationId relation;
    std::map<std::string, std::vector<Vector>> object_vecs_by_parent;
    std::map<std::string, std::vector<Vector>> subject_vecs_by_parent;
    std::map<std::string, std::string> parent_labels;
    std::vector<LabeledSubject> subjects;
    std::vector<CausalityProbe> probes;  // aligned with subjects

    int distinct_parents() const { return static_cast<int>(object_vecs_by_parent.size()); }
};

inline RelationEvalSet build_eval_set(const std::vector<CollectedSample>& collected,
                                      const HierarchyTree& tree, const RelationId& relation) {
    RelationEvalSet set;
    set.relation = relation;
    for (const auto& cs : collected) {
        if (!(cs.triple.relation == relation)) continue;
        const std::string& parent = cs.triple.object_id;
        set.object_vecs_by_parent[parent].push_back(cs.sample.object_vec);
        set.subject_vecs_by_parent[parent].push_back(cs.sample.subject_vec);
        set.parent_labels[parent] = tree.node(parent).label;
        set.subjects.push_back({cs.sample.subject_vec, parent, cs.triple.id()});
        CausalityProbe probe;
        probe.triple = cs.triple;
        probe.prompt = cs.prompt.text;
        probe.subject_begin = cs.prompt.subject_begin;
        probe.subject_end = cs.prompt.subject_end;
        probe.source_label = cs.prompt.answer_text;
        set.probes.push_back(std::move(probe));
    }
    return set;
}

// LHE concept vectors for the eval side: rank-k pseudo-inverse of the train
// map applied to the eval side's object representations. Cross-domain cells
// pass a map estimated on a different domain through the same call.
inline std::map<std::string, ConceptVector> lhe_concepts(const LinearRelationalMap& map, int rank,
                                                         const RelationEvalSet& set) {
    const PseudoInverse pinv = pseudo_inverse(map, rank);
    return concept_vectors(pinv, map.b, set.object_vecs_by_parent, set.relation);
}

struct EvalOutcome {
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double causality = std::numeric_limits<double>::quiet_NaN();
    int n_subjects = 0;
    int n_parents = 0;
    std::vector<InterventionCase> cases;
};

struct ScoreOptions {
    double beta = 1.0;
    std::uint64_t seed = 0;
    bool with_causality = true;
    std::size_t max_causality_cases = 0;  // 0 = all probes
};

inline ConceptDictionary wrap_dictionary(const std::map<std::string, ConceptVector>& entries,
                                         const RelationId& relation) {
    ConceptDictionary dict;
    dict.entries[relation.key()] = entries;
    return dict;
}

inline EvalOutcome score_dictionary(const std::map<std::string, ConceptVector>& entries,
                                    const RelationEvalSet& set, const Backend* backend,
                                    const ScoreOptions& opt) {
    EvalOutcome out;
    out.n_subjects = static_cast<int>(set.subjects.size());
    out.n_parents = set.distinct_parents();
    out.accuracy = accuracy(set.subjects, entries);
    if (!opt.with_causality || backend == nullptr) return out;

    const ConceptDictionary dict = wrap_dictionary(entries, set.relation);
    Rng rng(fnv1a(set.relation.key(), opt.seed ^ 0x1c69b3f74ac4fb0dULL));
    std::size_t limit = set.probes.size();
    if (opt.max_causality_cases > 0) limit = std::min(limit, opt.max_causality_cases);
    for (std::size_t i = 0; i < limit; ++i) {
        const auto& probe = set.probes[i];
        const std::string& source = probe.triple.object_id;
        if (entries.size() < 2 || !entries.count(source)) continue;
        InterventionCase c;
        c.triple = probe.triple;
        c.source_parent = source;
        c.target_parent = draw_target_parent(entries, source, rng);
        c.beta = opt.beta;
        CausalityProbe filled = probe;
        auto lbl = set.parent_labels.find(c.target_parent);
        filled.target_label = lbl != set.parent_labels.end() ? lbl->second : c.target_parent;
        causal_intervention(c, dict, *backend, filled);
        out.cases.push_back(std::move(c));
    }
    if (!out.cases.empty()) out.causality = causality_score(out.cases);
    return out;
}

}  // namespace lhe
