// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/taxonomy.hpp"

namespace lhe {

struct QaVerdict {
    std::string triple_id;
    bool kept = false;
    std::string top_option;   // letter
    std::string gold_option;  // letter
};

struct FilterResult {
    std::vector<Triple> kept;
    std::vector<QaVerdict> verdicts;  // one per input triple, input order
};

// Keeps a triple iff the backend's top-ranked option strictly beats every
// other option and names the gold parent. Ties count as incorrect.
inline FilterResult filter_by_qa(const std::vector<Triple>& triples, const Backend& backend,
                                 const PromptSpec& spec, const HierarchyTree& tree) {
    require(backend.capabilities().scoring, ErrorKind::CapabilityMissing,
            "backend '" + backend.model_name() + "' cannot score options");
    PromptSpec qa_spec = spec;
    qa_spec.template_kind = TemplateKind::QaMultipleChoice;

    FilterResult out;
    for (const auto& t : triples) {
        RenderedPrompt prompt;
        std::vector<ScoredCandidate> scored;
        try {
            prompt = render_prompt(t, qa_spec, tree);
            std::vector<std::string> letters;
            for (const auto& opt : prompt.options) letters.emplace_back(1, opt.letter);
            scored = backend.next_token_distribution(prompt.text, letters);
        } catch (const Error& e) {
            fail(e.kind(), "triple '" + t.id() + "': " + e.what());
        }
        QaVerdict v;
        v.triple_id = t.id();
        v.gold_option = std::string(1, prompt.gold_letter);
        const std::size_t top = top_candidate_index(scored);
        v.top_option = scored[top].text;
        bool strict = v.top_option == v.gold_option;
        for (std::size_t i = 0; strict && i < scored.size(); ++i)
            if (i != top && scored[i].score >= scored[top].score) strict = false;
        v.kept = strict;
        if (v.kept) out.kept.push_back(t);
        out.verdicts.push_back(std::move(v));
    }
    return out;
}

inline std::string verdicts_to_csv(const std::vector<QaVerdict>& verdicts) {
    std::string csv = "triple_id,kept,top_option,gold_option\n";
    for (const auto& v : verdicts)
        csv += v.triple_id + "," + (v.kept ? "1" : "0") + "," + v.top_option + "," + v.gold_option + "\n";
    return csv;
}

}  // namespace lhe
