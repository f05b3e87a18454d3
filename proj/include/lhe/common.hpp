// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cmath>
#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lhe {

// One error kind per distinct failure mode so callers can branch on the
// condition instead of parsing message text.
enum class ErrorKind {
    ParseFailure,
    OrphanNode,
    Cycle,
    MultipleRoots,
    DepthMismatch,
    InvalidArgument,
    SpanMismatch,
    LayerOutOfRange,
    CapabilityMissing,
    WidthMismatch,
    NonFinite,
    DegenerateRank,
    DegenerateConcept,
    UndefinedChance,
    EmptySplit,
    MissingArtifact,
    IntegrityError,
    VersionMismatch,
    SimplexBudget,
    RemoteFailure,
    InsufficientData,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::ParseFailure: return "parse_failure";
        case ErrorKind::OrphanNode: return "orphan_node";
        case ErrorKind::Cycle: return "cycle";
        case ErrorKind::MultipleRoots: return "multiple_roots";
        case ErrorKind::DepthMismatch: return "depth_mismatch";
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::SpanMismatch: return "span_mismatch";
        case ErrorKind::LayerOutOfRange: return "layer_out_of_range";
        case ErrorKind::CapabilityMissing: return "capability_missing";
        case ErrorKind::WidthMismatch: return "width_mismatch";
        case ErrorKind::NonFinite: return "non_finite";
        case ErrorKind::DegenerateRank: return "degenerate_rank";
        case ErrorKind::DegenerateConcept: return "degenerate_concept";
        case ErrorKind::UndefinedChance: return "undefined_chance";
        case ErrorKind::EmptySplit: return "empty_split";
        case ErrorKind::MissingArtifact: return "missing_artifact";
        case ErrorKind::IntegrityError: return "integrity_error";
        case ErrorKind::VersionMismatch: return "version_mismatch";
        case ErrorKind::SimplexBudget: return "simplex_budget";
        case ErrorKind::RemoteFailure: return "remote_failure";
        case ErrorKind::InsufficientData: return "insufficient_data";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
    if (!cond) fail(kind, message);
}

// Deterministic RNG. All randomness in the toolkit flows through this type
// from named seeds; distributions are hand-rolled so streams do not depend
// on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // splitmix64 expansion of the seed into the xoshiro256** state
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // modulo bias is irrelevant at the n used here (n << 2^64)
        return next_u64() % n;
    }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // k distinct indices from [0, n), order randomized
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        shuffle(idx);
        idx.resize(std::min(n, k));
        return idx;
    }

private:
    std::uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used to derive per-token / per-node seeds from strings.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace lhe
