// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lhe/common.hpp"
#include "lhe/io.hpp"

namespace lhe {

enum class RelationKind { IsA, PartOf };

inline const char* to_string(RelationKind k) { return k == RelationKind::IsA ? "is-a" : "part-of"; }

inline RelationKind relation_kind_from_string(const std::string& s) {
    if (s == "is-a") return RelationKind::IsA;
    if (s == "part-of") return RelationKind::PartOf;
    fail(ErrorKind::ParseFailure, "unknown relation_kind '" + s + "'");
}

struct ConceptNode {
    std::string id;
    std::string label;
    int depth = 0;
    std::optional<std::string> parent_id;
};

// A single rooted tree over concept nodes. Node ids are unique; every
// non-root node has exactly one parent whose depth is one less.
struct HierarchyTree {
    std::string domain;
    RelationKind relation_kind = RelationKind::IsA;
    std::map<std::string, ConceptNode> nodes;  // ordered for deterministic walks
    std::string root_id;
    std::map<std::string, std::vector<std::string>> children;  // parent id -> sorted child ids
    int max_depth = 0;

    const ConceptNode& node(const std::string& id) const {
        auto it = nodes.find(id);
        require(it != nodes.end(), ErrorKind::OrphanNode, "unknown node id '" + id + "'");
        return it->second;
    }

    bool has_node(const std::string& id) const { return nodes.count(id) > 0; }

    std::vector<std::string> ids_at_depth(int depth) const {
        std::vector<std::string> out;
        for (const auto& [id, n] : nodes)
            if (n.depth == depth) out.push_back(id);
        return out;
    }

    // Walks up to the node's ancestor at depth 1.
    const std::string& depth1_ancestor(const std::string& id) const {
        const ConceptNode* cur = &node(id);
        require(cur->depth >= 1, ErrorKind::InvalidArgument, "root has no depth-1 ancestor");
        while (cur->depth > 1) cur = &node(*cur->parent_id);
        return cur->id;
    }
};

struct RelationId {
    std::string domain;
    RelationKind kind = RelationKind::IsA;
    int child_depth = 0;
    int parent_depth = 0;

    std::string key() const {
        return domain + "/" + to_string(kind) + "/" + std::to_string(child_depth) + "-" +
               std::to_string(parent_depth);
    }

    bool operator==(const RelationId& o) const {
        return domain == o.domain && kind == o.kind && child_depth == o.child_depth &&
               parent_depth == o.parent_depth;
    }
    bool operator<(const RelationId& o) const { return key() < o.key(); }
};

struct Triple {
    std::string subject_id;
    std::string object_id;
    RelationId relation;

    // Each non-root node is the subject of exactly one triple, so the
    // subject id doubles as the triple id.
    const std::string& id() const { return subject_id; }
};

struct SplitPlan {
    std::set<std::string> train_roots;
    std::set<std::string> test_roots;
    std::vector<Triple> train;
    std::vector<Triple> test;
};

enum class TemplateKind { QaMultipleChoice, CompletionTemplate };

struct PromptSpec {
    TemplateKind template_kind = TemplateKind::CompletionTemplate;
    int fewshot_count = 5;
    std::vector<Triple> fewshot_examples;  // candidates; the query triple is skipped at render time
    int option_count = 4;                  // QA mode
    std::uint64_t seed = 0;                // drives distractor sampling and option order
};

struct RenderedOption {
    char letter = 'A';
    std::string node_id;
    std::string label;
};

struct RenderedPrompt {
    std::string text;
    std::size_t subject_begin = 0;  // char range of the final subject occurrence
    std::size_t subject_end = 0;
    std::string answer_text;           // gold parent label
    std::vector<RenderedOption> options;  // QA mode only
    char gold_letter = 0;                 // QA mode only
};

// ---------------------------------------------------------------------------
// load_hierarchy
// ---------------------------------------------------------------------------

inline HierarchyTree hierarchy_from_json(const nlohmann::json& doc, const std::string& origin = "<memory>") {
    HierarchyTree tree;
    try {
        tree.domain = doc.at("domain").get<std::string>();
        tree.relation_kind = relation_kind_from_string(doc.at("relation_kind").get<std::string>());
        for (const auto& jn : doc.at("nodes")) {
            ConceptNode n;
            n.id = jn.at("id").get<std::string>();
            n.label = jn.at("label").get<std::string>();
            n.depth = jn.at("depth").get<int>();
            if (jn.contains("parent_id") && !jn.at("parent_id").is_null())
                n.parent_id = jn.at("parent_id").get<std::string>();
            require(tree.nodes.emplace(n.id, n).second, ErrorKind::ParseFailure,
                    origin + ": duplicate node id '" + n.id + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseFailure, origin + ": " + e.what());
    }
    require(!tree.nodes.empty(), ErrorKind::ParseFailure, origin + ": no nodes");

    // Root identification: depth 0, absent parent, and their agreement.
    for (const auto& [id, n] : tree.nodes) {
        require(n.depth >= 0, ErrorKind::DepthMismatch, "node '" + id + "' has negative depth");
        if (n.depth == 0 || !n.parent_id) {
            require(n.depth == 0 && !n.parent_id, ErrorKind::DepthMismatch,
                    "node '" + id + "' must have depth 0 iff parent_id is absent");
            require(tree.root_id.empty(), ErrorKind::MultipleRoots,
                    "both '" + tree.root_id + "' and '" + id + "' look like roots");
            tree.root_id = id;
        }
    }
    require(!tree.root_id.empty(), ErrorKind::Cycle, origin + ": no root node (parent links form a cycle)");

    // Parent resolution and cycle detection before trusting declared depths.
    for (const auto& [id, n] : tree.nodes) {
        if (!n.parent_id) continue;
        require(tree.nodes.count(*n.parent_id) > 0, ErrorKind::OrphanNode,
                "node '" + id + "' references missing parent '" + *n.parent_id + "'");
        const ConceptNode* cur = &n;
        std::size_t steps = 0;
        while (cur->parent_id) {
            require(++steps <= tree.nodes.size(), ErrorKind::Cycle,
                    "parent chain from '" + id + "' never reaches the root");
            cur = &tree.nodes.at(*cur->parent_id);
        }
    }
    for (const auto& [id, n] : tree.nodes) {
        if (!n.parent_id) continue;
        const auto& parent = tree.nodes.at(*n.parent_id);
        require(parent.depth == n.depth - 1, ErrorKind::DepthMismatch,
                "node '" + id + "' (depth " + std::to_string(n.depth) + ") has parent '" + parent.id +
                    "' at depth " + std::to_string(parent.depth));
        tree.children[*n.parent_id].push_back(id);
        tree.max_depth = std::max(tree.max_depth, n.depth);
    }
    for (auto& [pid, kids] : tree.children) std::sort(kids.begin(), kids.end());
    return tree;
}

inline HierarchyTree load_hierarchy(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseFailure, path.string() + ": " + e.what());
    }
    return hierarchy_from_json(doc, path.string());
}

inline nlohmann::json hierarchy_to_json(const HierarchyTree& tree) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& [id, n] : tree.nodes) {
        nlohmann::json jn{{"id", n.id}, {"label", n.label}, {"depth", n.depth}};
        jn["parent_id"] = n.parent_id ? nlohmann::json(*n.parent_id) : nlohmann::json(nullptr);
        nodes.push_back(jn);
    }
    return nlohmann::json{{"domain", tree.domain},
                          {"relation_kind", to_string(tree.relation_kind)},
                          {"nodes", nodes}};
}

// ---------------------------------------------------------------------------
// derive_triples / split_by_root
// ---------------------------------------------------------------------------

inline std::vector<Triple> derive_triples(const HierarchyTree& tree) {
    std::vector<Triple> out;
    out.reserve(tree.nodes.size() - 1);
    for (const auto& [id, n] : tree.nodes) {  // map order = sorted by id
        if (!n.parent_id) continue;
        Triple t;
        t.subject_id = id;
        t.object_id = *n.parent_id;
        t.relation = RelationId{tree.domain, tree.relation_kind, n.depth, n.depth - 1};
        out.push_back(std::move(t));
    }
    return out;
}

inline SplitPlan split_by_root(const HierarchyTree& tree, const std::set<std::string>& train_roots) {
    const auto depth1 = tree.ids_at_depth(1);
    const std::set<std::string> depth1_set(depth1.begin(), depth1.end());
    require(!train_roots.empty(), ErrorKind::EmptySplit, "train root set is empty");
    for (const auto& r : train_roots)
        require(depth1_set.count(r) > 0, ErrorKind::OrphanNode, "'" + r + "' is not a depth-1 node");
    require(train_roots.size() < depth1_set.size(), ErrorKind::EmptySplit,
            "train roots cover every depth-1 node; test side would be empty");

    SplitPlan plan;
    plan.train_roots = train_roots;
    for (const auto& id : depth1)
        if (!train_roots.count(id)) plan.test_roots.insert(id);
    for (const auto& t : derive_triples(tree)) {
        const auto& anchor = tree.depth1_ancestor(t.subject_id);
        (train_roots.count(anchor) ? plan.train : plan.test).push_back(t);
    }
    require(!plan.train.empty(), ErrorKind::EmptySplit, "no train triples");
    require(!plan.test.empty(), ErrorKind::EmptySplit, "no test triples");
    return plan;
}

// Deterministic helper used by the pipeline when the config does not name
// explicit train roots.
inline std::set<std::string> pick_train_roots(const HierarchyTree& tree, double fraction, std::uint64_t seed) {
    auto depth1 = tree.ids_at_depth(1);
    require(depth1.size() >= 2, ErrorKind::EmptySplit, "need at least two depth-1 subtrees to split");
    Rng rng(fnv1a(tree.domain, seed ^ 0x9e3779b97f4a7c15ULL));
    rng.shuffle(depth1);
    std::size_t n_train = static_cast<std::size_t>(fraction * double(depth1.size()) + 0.5);
    n_train = std::clamp<std::size_t>(n_train, 1, depth1.size() - 1);
    return {depth1.begin(), depth1.begin() + static_cast<std::ptrdiff_t>(n_train)};
}

// Few-shot candidates for one relation: sampled once per (relation, seed)
// from the relation's train split. One extra is drawn so a query triple can
// be dropped at render time without shrinking the block.
inline std::vector<Triple> sample_fewshot(const std::vector<Triple>& train, const RelationId& relation,
                                          int count, std::uint64_t seed) {
    std::vector<Triple> pool;
    for (const auto& t : train)
        if (t.relation == relation) pool.push_back(t);
    Rng rng(fnv1a(relation.key(), seed ^ 0x51ed2701a2b9e3d5ULL));
    const auto idx = rng.sample_without_replacement(pool.size(), static_cast<std::size_t>(count) + 1);
    std::vector<Triple> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(pool[i]);
    return out;
}

// ---------------------------------------------------------------------------
// render_prompt
// ---------------------------------------------------------------------------

namespace detail {

inline std::string completion_stem(const HierarchyTree& tree, const std::string& subject_label) {
    return tree.relation_kind == RelationKind::PartOf ? subject_label + " is part of"
                                                      : subject_label + " is a kind of";
}

inline std::string completion_line(const HierarchyTree& tree, const Triple& t) {
    return completion_stem(tree, tree.node(t.subject_id).label) + " " + tree.node(t.object_id).label + ".";
}

inline std::string qa_question(const HierarchyTree& tree, const std::string& subject_label) {
    return tree.relation_kind == RelationKind::PartOf
               ? "Question: Which of the following is " + subject_label + " part of?"
               : "Question: Which of the following is " + subject_label + " a kind of?";
}

// Distractors are nodes at the gold parent's depth, preferring nodes under a
// different grandparent; same-parent siblings fill in when the tree is too
// shallow to provide enough of the former.
inline std::vector<std::string> qa_distractors(const HierarchyTree& tree, const Triple& query, int want,
                                               Rng& rng) {
    const auto& gold = tree.node(query.object_id);
    std::vector<std::string> preferred, fallback;
    for (const auto& id : tree.ids_at_depth(gold.depth)) {
        if (id == gold.id) continue;
        const auto& n = tree.node(id);
        if (n.parent_id != gold.parent_id)
            preferred.push_back(id);
        else
            fallback.push_back(id);
    }
    rng.shuffle(preferred);
    rng.shuffle(fallback);
    preferred.insert(preferred.end(), fallback.begin(), fallback.end());
    if (static_cast<int>(preferred.size()) > want) preferred.resize(static_cast<std::size_t>(want));
    return preferred;
}

}  // namespace detail

inline RenderedPrompt render_prompt(const Triple& query, const PromptSpec& spec, const HierarchyTree& tree) {
    RenderedPrompt out;
    const std::string& subject_label = tree.node(query.subject_id).label;
    require(!split_whitespace(subject_label).empty(), ErrorKind::SpanMismatch,
            "subject '" + query.subject_id + "' has a blank label");
    out.answer_text = tree.node(query.object_id).label;

    std::vector<Triple> shots;
    for (const auto& t : spec.fewshot_examples) {
        if (t.subject_id == query.subject_id && t.object_id == query.object_id) continue;
        if (static_cast<int>(shots.size()) == spec.fewshot_count) break;
        shots.push_back(t);
    }

    std::string text;
    if (spec.template_kind == TemplateKind::CompletionTemplate) {
        for (const auto& t : shots) text += detail::completion_line(tree, t) + "\n";
        text += detail::completion_stem(tree, subject_label);
    } else {
        Rng rng(fnv1a(query.id(), fnv1a(query.relation.key(), spec.seed ^ 0x7f4a7c159e3779b9ULL)));
        auto render_block = [&](const Triple& t, bool with_answer) {
            const auto& gold = tree.node(t.object_id);
            std::vector<std::string> option_ids =
                detail::qa_distractors(tree, t, spec.option_count - 1, rng);
            option_ids.push_back(gold.id);
            rng.shuffle(option_ids);
            std::string block = detail::qa_question(tree, tree.node(t.subject_id).label) + "\n";
            char letter = 'A';
            char gold_letter = 0;
            std::vector<RenderedOption> options;
            for (const auto& oid : option_ids) {
                block += std::string(1, letter) + ") " + tree.node(oid).label + "\n";
                options.push_back({letter, oid, tree.node(oid).label});
                if (oid == gold.id) gold_letter = letter;
                ++letter;
            }
            block += "Answer:";
            if (with_answer) block += std::string(" ") + gold_letter;
            if (!with_answer) {
                out.options = std::move(options);
                out.gold_letter = gold_letter;
            }
            return block;
        };
        for (const auto& t : shots) text += render_block(t, true) + "\n\n";
        text += render_block(query, false);
    }

    const std::size_t pos = text.rfind(subject_label);
    require(pos != std::string::npos, ErrorKind::SpanMismatch,
            "subject label '" + subject_label + "' missing from rendered prompt");
    out.subject_begin = pos;
    out.subject_end = pos + subject_label.size();
    out.text = std::move(text);
    return out;
}

}  // namespace lhe
