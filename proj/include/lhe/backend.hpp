// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lhe/common.hpp"
#include "lhe/io.hpp"
#include "lhe/taxonomy.hpp"

namespace lhe {

// Per-layer, per-position hidden states for one prompt. Layer index runs
// 0..L inclusive; all layers share the model width.
struct LayerActivations {
    std::vector<std::vector<Vector>> states;  // [layer][position]

    int layer_count() const { return static_cast<int>(states.size()) - 1; }
    int width() const { return states.empty() || states[0].empty() ? 0 : static_cast<int>(states[0][0].size()); }
};

struct SubjectObjectSample {
    Vector subject_vec;             // layer ls, last subject token
    Vector object_vec;              // layer lo, mean over object tokens
    std::optional<Matrix> jacobian; // d_o x d_s
    std::optional<Vector> bias;     // object_vec - jacobian * subject_vec
    Triple triple_ref;
    int subject_layer = 0;
    int object_layer = 0;
};

// Checks the affine consistency bias = o - J s (1e-5 relative).
inline void validate_sample(const SubjectObjectSample& s) {
    if (!s.jacobian || !s.bias) return;
    const Vector predicted = s.object_vec - *s.jacobian * s.subject_vec;
    const double denom = std::max(1e-12, s.bias->norm());
    require((predicted - *s.bias).norm() / denom <= 1e-5, ErrorKind::NonFinite,
            "sample bias violates b = F(s) - J*s for triple '" + s.triple_ref.id() + "'");
}

// A normalized probability map over a token set (full vocabulary or a
// restricted candidate set).
struct TokenDistribution {
    std::vector<std::pair<std::string, double>> probs;

    double total() const {
        double t = 0;
        for (const auto& [_, p] : probs) t += p;
        return t;
    }
    double prob_of(const std::string& token) const {
        for (const auto& [tok, p] : probs)
            if (tok == token) return p;
        return 0.0;
    }
};

// One scored candidate continuation. Multi-token candidates carry one
// probability per token; score is their minimum.
struct ScoredCandidate {
    std::string text;
    double score = 0.0;
    std::vector<double> token_probs;
};

inline std::size_t top_candidate_index(const std::vector<ScoredCandidate>& scored) {
    require(!scored.empty(), ErrorKind::InvalidArgument, "no candidates to rank");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scored.size(); ++i)
        if (scored[i].score > scored[best].score) best = i;  // ties keep the earlier candidate
    return best;
}

// Steering edit: at the last subject token, at every layer, add
// beta * ||h||_2 * direction before downstream computation.
struct EditRequest {
    Vector direction;
    double beta = 1.0;
    std::size_t subject_begin = 0;  // char span locating the subject token
    std::size_t subject_end = 0;
};

struct ExtractionRequest {
    std::string prompt;
    std::size_t subject_begin = 0;
    std::size_t subject_end = 0;
    std::string object_text;
    int subject_layer = 0;
    int object_layer = 0;
    std::string triple_id;  // lets dump backends resolve stored tensors
};

enum class JacobianMethod { Analytic, FiniteDifference };

struct Capabilities {
    bool extraction = false;
    bool scoring = false;
    bool steering = false;
    bool jacobian_analytic = false;
    bool jacobian_finite_difference = false;
};

// Uniform contract over the planted toy model, activation dumps, and the
// remote inference client. Implementations are immutable after construction
// and safe to call concurrently.
class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string model_name() const = 0;
    virtual int hidden_width() const = 0;
    virtual int layer_count() const = 0;  // L; readable layers are 0..L
    virtual Capabilities capabilities() const = 0;

    virtual SubjectObjectSample extract_sample(const ExtractionRequest& req) const = 0;

    virtual std::pair<Matrix, Vector> jacobian_bias(const ExtractionRequest& req,
                                                    JacobianMethod method) const = 0;

    virtual std::vector<ScoredCandidate> next_token_distribution(
        const std::string& prompt, const std::vector<std::string>& candidates) const = 0;

    virtual std::vector<ScoredCandidate> steered_distribution(
        const std::string& prompt, const EditRequest& edit,
        const std::vector<std::string>& candidates) const = 0;
};

}  // namespace lhe
