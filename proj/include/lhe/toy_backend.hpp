// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/taxonomy.hpp"

namespace lhe {

// Synthetic sequence model with hierarchy planted into its hidden states.
//
// Tokens are whitespace-separated. The final token of a known node-label
// mention anchors that node's stream: layer 0 carries the planted node
// vector (parent prototype plus a child-specific offset) and each layer
// applies a fixed affine step. Positions after the query track the subject
// one layer behind, but read a denoised view of it: the model "recognizes"
// the mentioned child and carries its parent prototype forward, so object
// states are clean while subject states keep the child offset. Steering
// edits are injected into the subject stream and their deltas ride along to
// the readout. Every quantity has a closed form, which is what makes the
// model usable as an oracle for the rest of the toolkit.
struct ToyConfig {
    int width = 64;
    int layers = 6;  // L affine steps; readable states 0..L
    std::uint64_t seed = 1234;
    double layer_scale = 0.25;      // residual step size for the seeded builder
    double bias_scale = 0.05;       // per-layer bias magnitude for the seeded builder
    double nonlinearity = 0.0;      // gain of a rank-1 tanh term per layer
    double fd_step = 1e-4;          // central-difference step
    int signal_layer = 0;           // layer at which node identity enters the stream
    double post_signal_noise = 0.0; // per-(node, layer) drift after the signal layer
    std::string name = "toy";
    std::string rig_option;         // non-empty letter: QA scoring always prefers it
};

// How one tree's prototypes are planted.
struct TreePlanting {
    std::uint64_t seed = 7;
    double child_sigma = 0.1;        // child offset norm relative to prototype norm
    std::vector<int> support;        // prototype coordinate support (empty = full space)
    std::vector<int> shared_support; // optional second support block, disjoint from `support`
    double shared_weight = 0.0;      // energy fraction carried by shared_support
    double hierarchy_mixing = 0.0;   // in [0,1): prototypes inherit this much energy
                                     // from their parent's prototype, clustering subtrees
    double object_noise = 0.0;       // per-sample residual on object states that does
                                     // not pass through the layer maps
};

class ToyModel : public Backend {
public:
    explicit ToyModel(ToyConfig cfg) : cfg_(std::move(cfg)) {
        require(cfg_.width >= 1 && cfg_.layers >= 1, ErrorKind::InvalidArgument,
                "toy needs width/layers >= 1");
        const int d = cfg_.width;
        Rng rng(cfg_.seed ^ 0x5bd1e995c6b3a1f7ULL);
        const double a_scale = cfg_.layer_scale / std::sqrt(double(d));
        for (int l = 0; l < cfg_.layers; ++l) {
            Matrix m = Matrix::Identity(d, d);
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d; ++c) m(r, c) += a_scale * rng.normal();
            Vector bias(d);
            for (int r = 0; r < d; ++r) bias(r) = cfg_.bias_scale / std::sqrt(double(d)) * rng.normal();
            step_m_.push_back(std::move(m));
            step_c_.push_back(std::move(bias));
            if (cfg_.nonlinearity > 0.0) {
                Vector u(d), w(d);
                for (int r = 0; r < d; ++r) u(r) = rng.normal() / std::sqrt(double(d));
                for (int r = 0; r < d; ++r) w(r) = rng.normal() / std::sqrt(double(d));
                nl_u_.push_back(std::move(u));
                nl_w_.push_back(std::move(w));
            }
        }
        validate_steps();
    }

    // Explicit affine steps, for controlled constructions.
    ToyModel(ToyConfig cfg, std::vector<Matrix> step_m, std::vector<Vector> step_c)
        : cfg_(std::move(cfg)), step_m_(std::move(step_m)), step_c_(std::move(step_c)) {
        require(static_cast<int>(step_m_.size()) == cfg_.layers &&
                    static_cast<int>(step_c_.size()) == cfg_.layers,
                ErrorKind::InvalidArgument, "need one affine step per layer");
        require(cfg_.nonlinearity == 0.0, ErrorKind::InvalidArgument,
                "explicit-step toys are affine only");
        validate_steps();
    }

    // ------------------------------------------------------------------
    // planting
    // ------------------------------------------------------------------

    void add_tree(const HierarchyTree& tree, const TreePlanting& planting) {
        trees_.push_back(tree);
        const HierarchyTree& t = trees_.back();
        plantings_.push_back(planting);
        const int d = cfg_.width;

        for (const auto& [id, node] : t.nodes) {
            require(!node_home_.count(id), ErrorKind::InvalidArgument,
                    "node id '" + id + "' already planted");
            node_home_[id] = trees_.size() - 1;
            const std::string label_key = normalize_label(node.label);
            require(!label_to_node_.count(label_key), ErrorKind::InvalidArgument,
                    "label '" + node.label + "' already planted");
            label_to_node_[label_key] = id;
            max_label_tokens_ = std::max(max_label_tokens_, split_whitespace(node.label).size());
        }

        // prototypes for nodes that have children, shallow first so deeper
        // prototypes can inherit from their parent's
        std::vector<std::string> internal;
        for (const auto& [id, kids] : t.children) {
            (void)kids;
            internal.push_back(id);
        }
        std::sort(internal.begin(), internal.end(), [&](const std::string& a, const std::string& b) {
            const int da = t.node(a).depth, db = t.node(b).depth;
            return da != db ? da < db : a < b;
        });
        for (const auto& id : internal) {
            Vector proto = sample_prototype(id, planting);
            const auto& parent_id = t.node(id).parent_id;
            if (planting.hierarchy_mixing > 0.0 && parent_id && prototypes_.count(*parent_id)) {
                proto = std::sqrt(planting.hierarchy_mixing) * prototypes_.at(*parent_id) +
                        std::sqrt(1.0 - planting.hierarchy_mixing) * proto;
                proto /= proto.norm();
            }
            prototypes_[id] = proto;
        }
        // node vectors: parent prototype plus a child-specific offset
        for (const auto& [id, node] : t.nodes) {
            if (!node.parent_id) {
                node_vectors_[id] = prototypes_.at(id);
                continue;
            }
            const Vector& proto = prototypes_.at(*node.parent_id);
            Vector offset = seeded_unit(fnv1a(id, planting.seed ^ 0x2545f4914f6cdd1dULL), d);
            node_vectors_[id] = proto + planting.child_sigma * proto.norm() * offset;
        }
        // unembeddings: transported prototypes (internal nodes) or transported
        // node vectors (leaves), linear part only
        for (const auto& [id, node] : t.nodes) {
            const Vector& base = prototypes_.count(id) ? prototypes_.at(id) : node_vectors_.at(id);
            Vector z = base;
            for (int l = cfg_.signal_layer; l < cfg_.layers; ++l)
                z = step_m_[static_cast<std::size_t>(l)] * z;
            const double nrm = z.norm();
            require(nrm > 1e-12, ErrorKind::DegenerateConcept, "degenerate unembedding for '" + id + "'");
            unembeddings_[id] = z / nrm;
        }
        rebuild_vocab();
    }

    // ------------------------------------------------------------------
    // planted accessors (the oracle surface)
    // ------------------------------------------------------------------

    const Vector& node_vector(const std::string& id) const { return at(node_vectors_, id, "node vector"); }
    const Vector& prototype(const std::string& id) const { return at(prototypes_, id, "prototype"); }
    const Vector& unembedding(const std::string& id) const { return at(unembeddings_, id, "unembedding"); }
    const Matrix& step_matrix(int layer) const { return step_m_.at(static_cast<std::size_t>(layer - 1)); }
    const Vector& step_bias(int layer) const { return step_c_.at(static_cast<std::size_t>(layer - 1)); }
    double child_sigma(std::size_t tree_index = 0) const { return plantings_.at(tree_index).child_sigma; }

    // Composed affine transport between layers; the ground-truth relational map.
    std::pair<Matrix, Vector> planted_map(int from_layer, int to_layer) const {
        check_layers(from_layer, to_layer);
        require(cfg_.nonlinearity == 0.0, ErrorKind::InvalidArgument,
                "planted_map is defined for the affine toy only");
        Matrix m = Matrix::Identity(cfg_.width, cfg_.width);
        Vector c = Vector::Zero(cfg_.width);
        for (int l = from_layer; l < to_layer; ++l) {
            m = step_m_[static_cast<std::size_t>(l)] * m;
            c = step_m_[static_cast<std::size_t>(l)] * c + step_c_[static_cast<std::size_t>(l)];
        }
        return {m, c};
    }

    // Applies the model's steps (plus planted constants for `node_id`) from
    // one layer's state to another.
    Vector propagate(int from_layer, int to_layer, Vector h, const std::string& node_id = "") const {
        check_layers(from_layer, to_layer);
        for (int l = from_layer + 1; l <= to_layer; ++l)
            h = apply_step(l, h, node_id, node_id.empty() ? nullptr : &node_vectors_.at(node_id));
        return h;
    }

    // ------------------------------------------------------------------
    // Backend interface
    // ------------------------------------------------------------------

    std::string model_name() const override { return cfg_.name; }
    int hidden_width() const override { return cfg_.width; }
    int layer_count() const override { return cfg_.layers; }

    Capabilities capabilities() const override { return Capabilities{true, true, true, true, true}; }

    SubjectObjectSample extract_sample(const ExtractionRequest& req) const override {
        check_request_layers(req);
        require(!split_whitespace(req.object_text).empty(), ErrorKind::InvalidArgument,
                "object text tokenizes to zero tokens");
        const Anchor anchor = anchor_from_span(req.prompt, req.subject_begin, req.subject_end);
        const auto subject_states = run_stream(noisy_spec(anchor), nullptr);
        const auto object_states = run_stream(clean_spec(anchor), nullptr);
        SubjectObjectSample s;
        s.subject_vec = subject_states[static_cast<std::size_t>(req.subject_layer)];
        s.object_vec = object_states[static_cast<std::size_t>(req.object_layer)];
        s.subject_layer = req.subject_layer;
        s.object_layer = req.object_layer;
        s.triple_ref.subject_id = req.triple_id;
        return s;
    }

    std::pair<Matrix, Vector> jacobian_bias(const ExtractionRequest& req,
                                            JacobianMethod method) const override {
        check_request_layers(req);
        const Anchor anchor = anchor_from_span(req.prompt, req.subject_begin, req.subject_end);
        const auto subject_states = run_stream(noisy_spec(anchor), nullptr);
        const auto object_states = run_stream(clean_spec(anchor), nullptr);
        const int ls = req.subject_layer, lo = req.object_layer;
        const Vector& s = subject_states[static_cast<std::size_t>(ls)];
        const Vector& o = object_states[static_cast<std::size_t>(lo)];
        Matrix jac;
        if (method == JacobianMethod::Analytic) {
            jac = Matrix::Identity(cfg_.width, cfg_.width);
            for (int l = ls + 1; l <= lo; ++l)
                jac = step_jacobian(l, subject_states[static_cast<std::size_t>(l - 1)]) * jac;
        } else {
            const double h = cfg_.fd_step;
            jac.resize(cfg_.width, cfg_.width);
            for (int i = 0; i < cfg_.width; ++i) {
                Vector plus = s, minus = s;
                plus(i) += h;
                minus(i) -= h;
                const Vector fp = propagate(ls, lo, plus, anchor.node_id);
                const Vector fm = propagate(ls, lo, minus, anchor.node_id);
                jac.col(i) = (fp - fm) / (2.0 * h);
            }
        }
        require(jac.allFinite(), ErrorKind::NonFinite, "jacobian has non-finite entries");
        return {jac, o - jac * s};
    }

    std::vector<ScoredCandidate> next_token_distribution(
        const std::string& prompt, const std::vector<std::string>& candidates) const override {
        return score(prompt, candidates, nullptr);
    }

    std::vector<ScoredCandidate> steered_distribution(
        const std::string& prompt, const EditRequest& edit,
        const std::vector<std::string>& candidates) const override {
        require(edit.direction.size() == cfg_.width, ErrorKind::WidthMismatch,
                "edit direction width " + std::to_string(edit.direction.size()) + " != model width " +
                    std::to_string(cfg_.width));
        require(edit.direction.allFinite(), ErrorKind::NonFinite, "edit direction has non-finite entries");
        return score(prompt, candidates, &edit);
    }

    // Full-vocabulary next-token distribution at the readout position;
    // probabilities sum to one.
    TokenDistribution token_distribution(const std::string& prompt) const {
        const Vector z = readout_vector(resolve_focus(prompt), nullptr);
        std::vector<std::pair<std::string, double>> logits;
        logits.reserve(vocab_readout_.size());
        for (const auto& [tok, r] : vocab_readout_) logits.emplace_back(tok, r.dot(z));
        TokenDistribution dist;
        dist.probs = softmax(logits);
        return dist;
    }

    // Per-layer, per-position states for a full text (prompt plus any
    // appended continuation). Mention-final positions carry their node
    // stream; positions after the focus carry the prediction stream.
    LayerActivations activations(const std::string& text) const {
        const auto tokens = tokenize(text);
        require(!tokens.empty(), ErrorKind::InvalidArgument, "empty text");
        const Anchor focus = resolve_focus(text);
        LayerActivations acts;
        acts.states.assign(static_cast<std::size_t>(cfg_.layers) + 1, {});
        const auto mention_ends = mention_map(tokens);
        const auto prediction_states = run_stream(clean_spec(focus), nullptr);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            std::vector<Vector> column;
            auto it = mention_ends.find(i);
            if (it != mention_ends.end() && i <= focus.token_index) {
                column = run_stream(noisy_spec(Anchor{it->second, tokens[i].text, i}), nullptr);
            } else if (i > focus.token_index) {
                column = prediction_states;  // prediction region mirrors the recognized parent
            } else {
                column = run_stream(noisy_spec(Anchor{"", tokens[i].text, i}), nullptr);
            }
            for (int l = 0; l <= cfg_.layers; ++l)
                acts.states[static_cast<std::size_t>(l)].push_back(column[static_cast<std::size_t>(l)]);
        }
        return acts;
    }

private:
    struct Token {
        std::string text;
        std::size_t begin = 0;
        std::size_t end = 0;
    };

    struct Anchor {
        std::string node_id;     // empty when the anchor is not a known mention
        std::string token_text;  // last token of the span / region
        std::size_t token_index = 0;
    };

    // A stream is defined by its layer-0 state (or the vector injected at
    // the signal layer) plus the node whose drift constants apply.
    struct StreamSpec {
        Vector signal;         // node vector (noisy) or recognized prototype (clean)
        std::string junk_node;
        std::string fallback_token;
        bool has_signal = false;
        double residual_scale = 0.0;  // object-side residual, keyed by junk_node
    };

    void validate_steps() {
        for (const auto& m : step_m_)
            require(m.rows() == cfg_.width && m.cols() == cfg_.width, ErrorKind::WidthMismatch,
                    "step matrix width mismatch");
        for (const auto& c : step_c_)
            require(c.size() == cfg_.width, ErrorKind::WidthMismatch, "step bias width mismatch");
        require(cfg_.signal_layer >= 0 && cfg_.signal_layer < cfg_.layers, ErrorKind::LayerOutOfRange,
                "signal layer out of range");
    }

    void check_request_layers(const ExtractionRequest& req) const {
        require(req.subject_layer >= 0 && req.subject_layer <= req.object_layer &&
                    req.object_layer <= cfg_.layers,
                ErrorKind::LayerOutOfRange, "need 0 <= subject layer <= object layer <= L");
    }

    template <typename M>
    static const Vector& at(const M& m, const std::string& id, const char* what) {
        auto it = m.find(id);
        require(it != m.end(), ErrorKind::OrphanNode, std::string("no planted ") + what + " for '" + id + "'");
        return it->second;
    }

    void check_layers(int from_layer, int to_layer) const {
        require(0 <= from_layer && from_layer <= to_layer && to_layer <= cfg_.layers,
                ErrorKind::LayerOutOfRange, "layer range out of bounds");
    }

    static std::string normalize_label(const std::string& label) {
        std::string out;
        for (const auto& t : split_whitespace(label)) {
            if (!out.empty()) out += ' ';
            out += t;
        }
        return out;
    }

    static Vector seeded_unit(std::uint64_t seed, int d) {
        Rng rng(seed);
        Vector v(d);
        for (int i = 0; i < d; ++i) v(i) = rng.normal();
        const double n = v.norm();
        return n > 0 ? Vector(v / n) : v;
    }

    Vector seeded_unit_on(std::uint64_t seed, const std::vector<int>& support) const {
        Rng rng(seed);
        Vector v = Vector::Zero(cfg_.width);
        for (int idx : support) {
            require(idx >= 0 && idx < cfg_.width, ErrorKind::InvalidArgument, "support index out of range");
            v(idx) = rng.normal();
        }
        const double n = v.norm();
        require(n > 1e-12, ErrorKind::DegenerateConcept, "degenerate supported vector");
        return v / n;
    }

    Vector sample_prototype(const std::string& id, const TreePlanting& p) const {
        std::vector<int> support = p.support;
        if (support.empty()) {
            support.resize(static_cast<std::size_t>(cfg_.width));
            std::iota(support.begin(), support.end(), 0);
        }
        Vector proto = seeded_unit_on(fnv1a(id, p.seed ^ 0x9e3779b97f4a7c15ULL), support);
        if (!p.shared_support.empty() && p.shared_weight > 0.0) {
            const Vector shared =
                seeded_unit_on(fnv1a(id, p.seed ^ 0xd6e8feb86659fd93ULL), p.shared_support);
            proto = std::sqrt(1.0 - p.shared_weight) * proto + std::sqrt(p.shared_weight) * shared;
        }
        return proto;
    }

    Vector token_embedding(const std::string& token) const {
        Rng rng(fnv1a(token, cfg_.seed ^ 0xa0761d6478bd642fULL));
        Vector v(cfg_.width);
        for (int i = 0; i < cfg_.width; ++i) v(i) = rng.normal() / std::sqrt(double(cfg_.width));
        return v;
    }

    Vector junk_drift(const std::string& node_id, int layer) const {
        return cfg_.post_signal_noise *
               seeded_unit(fnv1a(node_id,
                                 cfg_.seed ^ (0x8b72e7c4d5a9f123ULL + 0x9e3779b9ULL * std::uint64_t(layer))),
                           cfg_.width);
    }

    // One layer step including planted constants for the given stream.
    Vector apply_step(int layer, const Vector& h, const std::string& junk_node,
                      const Vector* signal) const {
        const auto li = static_cast<std::size_t>(layer - 1);
        Vector out = step_m_[li] * h + step_c_[li];
        if (cfg_.nonlinearity > 0.0)
            out += cfg_.nonlinearity * std::tanh(nl_w_[li].dot(h)) * nl_u_[li];
        if (signal && layer == cfg_.signal_layer) out += *signal;
        if (!junk_node.empty() && cfg_.post_signal_noise > 0.0 && layer > cfg_.signal_layer)
            out += junk_drift(junk_node, layer);
        return out;
    }

    Matrix step_jacobian(int layer, const Vector& h) const {
        const auto li = static_cast<std::size_t>(layer - 1);
        Matrix j = step_m_[li];
        if (cfg_.nonlinearity > 0.0) {
            const double t = std::tanh(nl_w_[li].dot(h));
            j += cfg_.nonlinearity * (1.0 - t * t) * nl_u_[li] * nl_w_[li].transpose();
        }
        return j;
    }

    StreamSpec noisy_spec(const Anchor& anchor) const {
        StreamSpec spec;
        spec.fallback_token = anchor.token_text;
        spec.junk_node = anchor.node_id;
        if (!anchor.node_id.empty()) {
            spec.signal = node_vectors_.at(anchor.node_id);
            spec.has_signal = true;
        }
        return spec;
    }

    // The recognized view: the parent prototype of the mentioned node, i.e.
    // the node vector with the child offset removed.
    StreamSpec clean_spec(const Anchor& anchor) const {
        StreamSpec spec = noisy_spec(anchor);
        if (anchor.node_id.empty()) return spec;
        const auto home = node_home_.at(anchor.node_id);
        const auto& node = trees_[home].node(anchor.node_id);
        spec.signal = node.parent_id ? prototypes_.at(*node.parent_id) : node_vectors_.at(anchor.node_id);
        spec.residual_scale = plantings_[home].object_noise;
        return spec;
    }

    Vector residual_noise(const std::string& node_id, int layer) const {
        return seeded_unit(
            fnv1a(node_id, cfg_.seed ^ (0x3c6ef372fe94f82bULL + 0x100000001b3ULL * std::uint64_t(layer))),
            cfg_.width);
    }

    // Full layer stack for one stream, with optional steering edits applied
    // at every layer. The object-side residual is visible in the recorded
    // states but never feeds the recurrence, so it stays outside the span of
    // the layer maps.
    std::vector<Vector> run_stream(const StreamSpec& spec, const EditRequest* edit) const {
        std::vector<Vector> states;
        states.reserve(static_cast<std::size_t>(cfg_.layers) + 1);
        Vector h;
        if (spec.has_signal && cfg_.signal_layer == 0)
            h = spec.signal;
        else
            h = token_embedding(spec.fallback_token);
        if (edit) h += edit->beta * h.norm() * edit->direction;
        auto record = [&](int layer) {
            if (spec.residual_scale > 0.0)
                states.push_back(h + spec.residual_scale * residual_noise(spec.junk_node, layer));
            else
                states.push_back(h);
        };
        record(0);
        const Vector* signal = spec.has_signal && cfg_.signal_layer > 0 ? &spec.signal : nullptr;
        for (int l = 1; l <= cfg_.layers; ++l) {
            h = apply_step(l, h, spec.junk_node, signal);
            if (edit) h += edit->beta * h.norm() * edit->direction;
            record(l);
        }
        return states;
    }

    // Readout state: the clean stream plus whatever delta the subject edits
    // injected, read one layer behind (the subject's final-layer edit never
    // reaches downstream positions).
    Vector readout_vector(const Anchor& anchor, const EditRequest* edit) const {
        const auto clean = run_stream(clean_spec(anchor), nullptr);
        if (!edit) return clean.back();
        const auto noisy = run_stream(noisy_spec(anchor), nullptr);
        const auto edited = run_stream(noisy_spec(anchor), edit);
        const auto L = static_cast<std::size_t>(cfg_.layers);
        const StreamSpec spec = noisy_spec(anchor);
        const Vector* signal = spec.has_signal && cfg_.signal_layer > 0 ? &spec.signal : nullptr;
        const Vector z_edited = apply_step(cfg_.layers, edited[L - 1], spec.junk_node, signal);
        const Vector z_clean = apply_step(cfg_.layers, noisy[L - 1], spec.junk_node, signal);
        return clean.back() + (z_edited - z_clean);
    }

    static std::vector<Token> tokenize(const std::string& text) {
        std::vector<Token> out;
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) out.push_back({text.substr(i, j - i), i, j});
            i = j;
        }
        return out;
    }

    // Longest known label whose token sequence ends at index j, if any;
    // returns (node id, token length).
    std::optional<std::pair<std::string, std::size_t>> mention_ending_at(
        const std::vector<Token>& tokens, std::size_t j) const {
        const std::size_t longest = std::min(max_label_tokens_, j + 1);
        for (std::size_t len = longest; len >= 1; --len) {
            std::string key;
            for (std::size_t k = j + 1 - len; k <= j; ++k) {
                if (!key.empty()) key += ' ';
                key += strip_punct(tokens[k].text);
            }
            auto it = label_to_node_.find(key);
            if (it != label_to_node_.end()) return std::make_pair(it->second, len);
        }
        return std::nullopt;
    }

    std::map<std::size_t, std::string> mention_map(const std::vector<Token>& tokens) const {
        std::map<std::size_t, std::string> out;
        for (std::size_t j = 0; j < tokens.size(); ++j)
            if (auto m = mention_ending_at(tokens, j)) out[j] = m->first;
        return out;
    }

    // Trailing template punctuation should not hide a mention.
    static std::string strip_punct(const std::string& tok) {
        std::size_t end = tok.size();
        while (end > 0 && (tok[end - 1] == '.' || tok[end - 1] == ',' || tok[end - 1] == '?' ||
                           tok[end - 1] == ':' || tok[end - 1] == ';'))
            --end;
        return tok.substr(0, end);
    }

    Anchor anchor_from_span(const std::string& prompt, std::size_t begin, std::size_t end) const {
        require(end > begin && end <= prompt.size(), ErrorKind::SpanMismatch,
                "empty or out-of-range span");
        const auto tokens = tokenize(prompt);
        std::optional<std::size_t> last;
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i].begin < end && tokens[i].end > begin) last = i;
        require(last.has_value(), ErrorKind::SpanMismatch, "span resolves to zero tokens");
        Anchor a;
        a.token_index = *last;
        a.token_text = tokens[*last].text;
        if (auto m = mention_ending_at(tokens, *last)) a.node_id = m->first;
        return a;
    }

    // The focus is the last mention of the query region: the final
    // "Question:" line for QA prompts, the whole text otherwise. A mention
    // that ends exactly at the final token is continuation text (an object
    // being generated), not the focus, unless nothing precedes it.
    Anchor resolve_focus(const std::string& prompt) const {
        std::string region = prompt;
        if (prompt_is_qa(prompt)) {
            const std::size_t q = prompt.rfind("Question:");
            if (q != std::string::npos) {
                const std::size_t eol = prompt.find('\n', q);
                region = prompt.substr(q, eol == std::string::npos ? std::string::npos : eol - q);
            }
        }
        const auto tokens = tokenize(region);
        require(!tokens.empty(), ErrorKind::InvalidArgument, "prompt has no tokens");
        Anchor a;
        a.token_index = tokens.size() - 1;
        a.token_text = tokens.back().text;
        std::size_t search_from = tokens.size() - 1;
        std::optional<std::pair<std::string, std::size_t>> trailing;
        if ((trailing = mention_ending_at(tokens, tokens.size() - 1))) {
            if (tokens.size() > trailing->second)
                search_from = tokens.size() - 1 - trailing->second;
            else
                search_from = tokens.size();  // nothing before the trailing mention
        }
        for (std::size_t j = std::min(search_from + 1, tokens.size()); j-- > 0;) {
            if (auto m = mention_ending_at(tokens, j)) {
                a.node_id = m->first;
                a.token_index = j;
                a.token_text = tokens[j].text;
                return a;
            }
        }
        if (trailing) {
            a.node_id = trailing->first;
            a.token_index = tokens.size() - 1;
            a.token_text = tokens.back().text;
        }
        return a;
    }

    static bool prompt_is_qa(const std::string& prompt) {
        std::size_t end = prompt.size();
        while (end > 0 && std::isspace(static_cast<unsigned char>(prompt[end - 1]))) --end;
        const std::string tail = "Answer:";
        return end >= tail.size() && prompt.compare(end - tail.size(), tail.size(), tail) == 0;
    }

    // letter -> node id for the final options block
    std::map<char, std::string> parse_options(const std::string& prompt) const {
        std::map<char, std::string> out;
        std::size_t line_start = 0;
        while (line_start <= prompt.size()) {
            std::size_t line_end = prompt.find('\n', line_start);
            if (line_end == std::string::npos) line_end = prompt.size();
            const std::string line = prompt.substr(line_start, line_end - line_start);
            if (line.size() >= 4 && line[0] >= 'A' && line[0] <= 'Z' && line[1] == ')' && line[2] == ' ') {
                auto it = label_to_node_.find(normalize_label(line.substr(3)));
                if (it != label_to_node_.end()) out[line[0]] = it->second;
            } else if (line.rfind("Question:", 0) == 0) {
                out.clear();  // options belong to the most recent question
            }
            if (line_end == prompt.size()) break;
            line_start = line_end + 1;
        }
        return out;
    }

    static std::vector<std::pair<std::string, double>> softmax(
        std::vector<std::pair<std::string, double>> logits) {
        double mx = -std::numeric_limits<double>::infinity();
        for (const auto& [_, v] : logits) mx = std::max(mx, v);
        double total = 0;
        for (auto& [_, v] : logits) {
            v = std::exp(v - mx);
            total += v;
        }
        for (auto& [_, v] : logits) v /= total;
        return logits;
    }

    std::vector<ScoredCandidate> score(const std::string& prompt,
                                       const std::vector<std::string>& candidates,
                                       const EditRequest* edit) const {
        require(!candidates.empty(), ErrorKind::InvalidArgument, "empty candidate list");
        const Anchor anchor = edit ? anchor_from_span(prompt, edit->subject_begin, edit->subject_end)
                                   : resolve_focus(prompt);
        const Vector z = readout_vector(anchor, edit);

        const auto options = prompt_is_qa(prompt) ? parse_options(prompt) : std::map<char, std::string>{};
        const bool letters = !options.empty() &&
                             std::all_of(candidates.begin(), candidates.end(), [&](const std::string& c) {
                                 return c.size() == 1 && options.count(c[0]) > 0;
                             });

        std::vector<ScoredCandidate> out;
        if (letters) {
            std::vector<std::pair<std::string, double>> logits;
            for (const auto& [letter, node_id] : options) {
                double logit = unembeddings_.at(node_id).dot(z);
                if (!cfg_.rig_option.empty() && letter == cfg_.rig_option[0]) logit += 1e3;
                logits.emplace_back(std::string(1, letter), logit);
            }
            const auto probs = softmax(std::move(logits));
            for (const auto& cand : candidates) {
                ScoredCandidate sc;
                sc.text = cand;
                for (const auto& [tok, p] : probs)
                    if (tok == cand) sc.score = p;
                sc.token_probs = {sc.score};
                out.push_back(std::move(sc));
            }
            return out;
        }

        std::vector<std::pair<std::string, double>> logits;
        logits.reserve(vocab_readout_.size());
        for (const auto& [tok, r] : vocab_readout_) logits.emplace_back(tok, r.dot(z));
        const auto probs = softmax(std::move(logits));
        std::map<std::string, double> prob_of;
        for (const auto& [tok, p] : probs) prob_of[tok] = p;
        for (const auto& cand : candidates) {
            ScoredCandidate sc;
            sc.text = cand;
            double mn = std::numeric_limits<double>::infinity();
            for (const auto& tok : split_whitespace(cand)) {
                auto it = prob_of.find(tok);
                const double p = it == prob_of.end() ? 0.0 : it->second;
                sc.token_probs.push_back(p);
                mn = std::min(mn, p);
            }
            sc.score = sc.token_probs.empty() ? 0.0 : mn;
            out.push_back(std::move(sc));
        }
        return out;
    }

    void rebuild_vocab() {
        vocab_readout_.clear();
        for (const auto& [id, u] : unembeddings_) {
            for (const auto& tok : split_whitespace(label_of(id))) {
                auto [it, fresh] = vocab_readout_.emplace(tok, Vector::Zero(cfg_.width));
                (void)fresh;
                it->second += u;
            }
        }
    }

    const std::string& label_of(const std::string& id) const {
        return trees_[node_home_.at(id)].node(id).label;
    }

    ToyConfig cfg_;
    std::vector<Matrix> step_m_;
    std::vector<Vector> step_c_;
    std::vector<Vector> nl_u_, nl_w_;

    std::vector<HierarchyTree> trees_;
    std::vector<TreePlanting> plantings_;
    std::map<std::string, std::size_t> node_home_;
    std::map<std::string, std::string> label_to_node_;  // normalized label -> node id
    std::size_t max_label_tokens_ = 0;
    std::map<std::string, Vector> prototypes_;
    std::map<std::string, Vector> node_vectors_;
    std::map<std::string, Vector> unembeddings_;
    std::map<std::string, Vector> vocab_readout_;  // token -> summed unembeddings
};

}  // namespace lhe
