// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/SVD>
#include <json.hpp>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/io.hpp"
#include "lhe/taxonomy.hpp"

namespace lhe {

struct MapMetadata {
    int subject_layer = 0;
    int object_layer = 0;
    int n_train = 0;
    std::uint64_t seed = 0;
    std::string model;
};

// Affine map o ~= W s + b for one relation, estimated as the mean of
// per-sample Jacobians and biases, with its thin SVD computed eagerly so
// rank sweeps can re-truncate without re-decomposing.
struct LinearRelationalMap {
    RelationId relation;
    Matrix W;
    Vector b;
    Matrix U;  // d_o x r
    Vector S;  // r, non-increasing
    Matrix V;  // d_s x r
    int rank_k = 0;
    MapMetadata meta;

    Eigen::Index d_s() const { return W.cols(); }
    Eigen::Index d_o() const { return W.rows(); }
};

struct PseudoInverse {
    Matrix Vk;       // d_s x k
    Vector inv_s;    // k
    Matrix Uk;       // d_o x k
    int rank = 0;

    // W^+ x = V_k diag(1/sigma) U_k^T x
    Vector apply(const Vector& x) const { return Vk * (inv_s.asDiagonal() * (Uk.transpose() * x)); }
    Matrix as_matrix() const { return Vk * inv_s.asDiagonal() * Uk.transpose(); }
};

struct ConceptVector {
    RelationId relation;
    std::string parent_id;
    Vector v;  // unit norm
    int support = 0;
};

// relation key -> parent id -> concept vector
struct ConceptDictionary {
    std::map<std::string, std::map<std::string, ConceptVector>> entries;

    const std::map<std::string, ConceptVector>& relation_entries(const RelationId& r) const {
        auto it = entries.find(r.key());
        require(it != entries.end(), ErrorKind::InvalidArgument,
                "no concept vectors for relation " + r.key());
        return it->second;
    }
    bool has_relation(const RelationId& r) const { return entries.count(r.key()) > 0; }
};

// ---------------------------------------------------------------------------
// estimate_map
// ---------------------------------------------------------------------------

inline void compute_svd(LinearRelationalMap& map) {
    Eigen::BDCSVD<Matrix> svd(map.W, Eigen::ComputeThinU | Eigen::ComputeThinV);
    map.U = svd.matrixU();
    map.S = svd.singularValues();
    map.V = svd.matrixV();
}

inline LinearRelationalMap estimate_map(const std::vector<SubjectObjectSample>& samples,
                                        const RelationId& relation, MapMetadata meta,
                                        int n_train = 8) {
    std::vector<const SubjectObjectSample*> usable;
    for (const auto& s : samples)
        if (s.jacobian && s.bias) usable.push_back(&s);
    require(!usable.empty(), ErrorKind::InsufficientData,
            "no jacobian-capable samples for relation " + relation.key());

    const Eigen::Index d_o = usable.front()->jacobian->rows();
    const Eigen::Index d_s = usable.front()->jacobian->cols();
    for (const auto* s : usable)
        require(s->jacobian->rows() == d_o && s->jacobian->cols() == d_s && s->bias->size() == d_o,
                ErrorKind::WidthMismatch, "inconsistent sample widths in relation " + relation.key());

    std::vector<const SubjectObjectSample*> chosen;
    if (static_cast<int>(usable.size()) <= n_train) {
        if (static_cast<int>(usable.size()) < n_train)
            std::cerr << "[lhe] relation " << relation.key() << " has only " << usable.size()
                      << " train samples (< " << n_train << "); using all\n";
        chosen = usable;
    } else {
        Rng rng(fnv1a(relation.key(), meta.seed ^ 0xe7037ed1a0b428dbULL));
        for (auto i : rng.sample_without_replacement(usable.size(), static_cast<std::size_t>(n_train)))
            chosen.push_back(usable[i]);
    }

    LinearRelationalMap map;
    map.relation = relation;
    map.meta = meta;
    map.meta.n_train = static_cast<int>(chosen.size());
    map.W = Matrix::Zero(d_o, d_s);
    map.b = Vector::Zero(d_o);
    for (const auto* s : chosen) {
        map.W += *s->jacobian;
        map.b += *s->bias;
    }
    map.W /= double(chosen.size());
    map.b /= double(chosen.size());
    require(map.W.allFinite() && map.b.allFinite(), ErrorKind::NonFinite,
            "estimated map has non-finite entries for relation " + relation.key());
    compute_svd(map);
    map.rank_k = static_cast<int>(map.S.size());
    return map;
}

// ---------------------------------------------------------------------------
// pseudo_inverse
// ---------------------------------------------------------------------------

inline PseudoInverse pseudo_inverse(const LinearRelationalMap& map, int rank_k) {
    const auto full = static_cast<int>(map.S.size());
    require(rank_k >= 1 && rank_k <= full, ErrorKind::InvalidArgument,
            "rank " + std::to_string(rank_k) + " outside [1, " + std::to_string(full) + "]");
    require(map.S(rank_k - 1) > 1e-10 * map.S(0), ErrorKind::DegenerateRank,
            "sigma_" + std::to_string(rank_k) + " is below the numerical-rank cutoff");
    PseudoInverse p;
    p.rank = rank_k;
    p.Uk = map.U.leftCols(rank_k);
    p.Vk = map.V.leftCols(rank_k);
    p.inv_s = map.S.head(rank_k).cwiseInverse();
    return p;
}

// ---------------------------------------------------------------------------
// concept_vectors
// ---------------------------------------------------------------------------

inline std::map<std::string, ConceptVector> concept_vectors(
    const PseudoInverse& pinv, const Vector& b,
    const std::map<std::string, std::vector<Vector>>& object_vecs_by_parent,
    const RelationId& relation) {
    std::map<std::string, ConceptVector> out;
    for (const auto& [parent, objects] : object_vecs_by_parent) {
        require(!objects.empty(), ErrorKind::InsufficientData, "empty example group for parent " + parent);
        Vector acc = Vector::Zero(pinv.Vk.rows());
        for (const auto& o : objects) acc += pinv.apply(o - b);
        acc /= double(objects.size());
        const double nrm = acc.norm();
        require(nrm >= 1e-12, ErrorKind::DegenerateConcept,
                "concept vector for parent " + parent + " collapsed to zero");
        ConceptVector cv;
        cv.relation = relation;
        cv.parent_id = parent;
        cv.v = acc / nrm;
        cv.support = static_cast<int>(objects.size());
        out.emplace(parent, std::move(cv));
    }
    return out;
}

// ---------------------------------------------------------------------------
// persistence: manifest.json + f32le tensors + concepts.json
// ---------------------------------------------------------------------------

inline constexpr int kMapFormatVersion = 1;

namespace detail {

inline void save_tensor(const std::filesystem::path& dir, const std::string& name, const Matrix& m,
                        nlohmann::json& tensors) {
    write_f32le(dir / (name + ".f32"), to_f32(m));
    tensors[name] = {{"file", name + ".f32"}, {"shape", {m.rows(), m.cols()}}};
}

inline void save_tensor(const std::filesystem::path& dir, const std::string& name, const Vector& v,
                        nlohmann::json& tensors) {
    write_f32le(dir / (name + ".f32"), to_f32(v));
    tensors[name] = {{"file", name + ".f32"}, {"shape", {v.size()}}};
}

inline Matrix load_matrix(const std::filesystem::path& dir, const nlohmann::json& tensors,
                          const std::string& name) {
    require(tensors.contains(name), ErrorKind::IntegrityError, "manifest lists no tensor '" + name + "'");
    const auto& t = tensors.at(name);
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    require(shape.size() == 2, ErrorKind::IntegrityError, "tensor '" + name + "' is not a matrix");
    const auto data = read_f32le(dir / t.at("file").get<std::string>(),
                                 static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]));
    return matrix_from_f32(data, shape[0], shape[1]);
}

inline Vector load_vector(const std::filesystem::path& dir, const nlohmann::json& tensors,
                          const std::string& name) {
    require(tensors.contains(name), ErrorKind::IntegrityError, "manifest lists no tensor '" + name + "'");
    const auto& t = tensors.at(name);
    const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
    require(shape.size() == 1, ErrorKind::IntegrityError, "tensor '" + name + "' is not a vector");
    return vector_from_f32(read_f32le(dir / t.at("file").get<std::string>(),
                                      static_cast<std::size_t>(shape[0])));
}

}  // namespace detail

inline nlohmann::json relation_to_json(const RelationId& r) {
    return {{"domain", r.domain},
            {"kind", to_string(r.kind)},
            {"child_depth", r.child_depth},
            {"parent_depth", r.parent_depth}};
}

inline RelationId relation_from_json(const nlohmann::json& j) {
    return RelationId{j.at("domain").get<std::string>(),
                      relation_kind_from_string(j.at("kind").get<std::string>()),
                      j.at("child_depth").get<int>(), j.at("parent_depth").get<int>()};
}

inline void save_map(const std::filesystem::path& dir, const LinearRelationalMap& map,
                     const std::map<std::string, ConceptVector>& concepts) {
    std::filesystem::create_directories(dir);
    nlohmann::json tensors = nlohmann::json::object();
    detail::save_tensor(dir, "W", map.W, tensors);
    detail::save_tensor(dir, "b", map.b, tensors);
    // factors are stored truncated to the configured rank
    const int k = std::min<int>(map.rank_k, static_cast<int>(map.S.size()));
    detail::save_tensor(dir, "U", Matrix(map.U.leftCols(k)), tensors);
    detail::save_tensor(dir, "S", Vector(map.S.head(k)), tensors);
    detail::save_tensor(dir, "V", Matrix(map.V.leftCols(k)), tensors);

    nlohmann::json concept_list = nlohmann::json::array();
    for (const auto& [parent, cv] : concepts) {
        const std::string tname = "concept_" + std::to_string(concept_list.size());
        detail::save_tensor(dir, tname, cv.v, tensors);
        concept_list.push_back({{"relation", cv.relation.key()},
                                {"parent_id", parent},
                                {"tensor", tname},
                                {"support", cv.support}});
    }
    write_text_atomic(dir / "concepts.json", concept_list.dump(2) + "\n");

    nlohmann::json manifest{{"format_version", kMapFormatVersion},
                            {"relation", relation_to_json(map.relation)},
                            {"model", map.meta.model},
                            {"subject_layer", map.meta.subject_layer},
                            {"object_layer", map.meta.object_layer},
                            {"n_train", map.meta.n_train},
                            {"seed", map.meta.seed},
                            {"rank_k", k},
                            {"d_s", map.d_s()},
                            {"d_o", map.d_o()},
                            {"dtype", "f32le"},
                            {"tensors", tensors}};
    write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct LoadedMap {
    LinearRelationalMap map;
    std::map<std::string, ConceptVector> concepts;
};

inline LoadedMap load_map(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseFailure, (dir / "manifest.json").string() + ": " + e.what());
    }
    require(manifest.value("format_version", -1) == kMapFormatVersion, ErrorKind::VersionMismatch,
            "unsupported map format version");
    const auto& tensors = manifest.at("tensors");

    LoadedMap out;
    auto& map = out.map;
    map.relation = relation_from_json(manifest.at("relation"));
    map.meta.model = manifest.value("model", "");
    map.meta.subject_layer = manifest.value("subject_layer", 0);
    map.meta.object_layer = manifest.value("object_layer", 0);
    map.meta.n_train = manifest.value("n_train", 0);
    map.meta.seed = manifest.value("seed", std::uint64_t{0});
    map.rank_k = manifest.at("rank_k").get<int>();
    map.W = detail::load_matrix(dir, tensors, "W");
    map.b = detail::load_vector(dir, tensors, "b");
    map.U = detail::load_matrix(dir, tensors, "U");
    map.S = detail::load_vector(dir, tensors, "S");
    map.V = detail::load_matrix(dir, tensors, "V");

    require(map.W.rows() == manifest.at("d_o").get<Eigen::Index>() &&
                map.W.cols() == manifest.at("d_s").get<Eigen::Index>(),
            ErrorKind::IntegrityError, "W shape disagrees with manifest");
    require(map.U.rows() == map.d_o() && map.V.rows() == map.d_s() &&
                map.U.cols() == map.rank_k && map.V.cols() == map.rank_k &&
                map.S.size() == map.rank_k,
            ErrorKind::IntegrityError, "SVD factor shapes disagree with rank_k");
    require(map.W.allFinite() && map.b.allFinite() && map.U.allFinite() && map.S.allFinite() &&
                map.V.allFinite(),
            ErrorKind::IntegrityError, "loaded tensors contain non-finite values");
    for (Eigen::Index i = 0; i + 1 < map.S.size(); ++i)
        require(map.S(i) >= map.S(i + 1) && map.S(i + 1) >= 0, ErrorKind::IntegrityError,
                "singular values are not non-increasing/non-negative");
    // f32 storage loosens orthonormality relative to freshly computed factors
    const double tol = 1e-4;
    require((map.U.transpose() * map.U - Matrix::Identity(map.rank_k, map.rank_k)).norm() <= tol &&
                (map.V.transpose() * map.V - Matrix::Identity(map.rank_k, map.rank_k)).norm() <= tol,
            ErrorKind::IntegrityError, "stored SVD factors are not orthonormal");

    nlohmann::json concept_list;
    try {
        concept_list = nlohmann::json::parse(read_text(dir / "concepts.json"));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseFailure, (dir / "concepts.json").string() + ": " + e.what());
    }
    for (const auto& c : concept_list) {
        ConceptVector cv;
        cv.relation = map.relation;
        cv.parent_id = c.at("parent_id").get<std::string>();
        cv.support = c.at("support").get<int>();
        cv.v = detail::load_vector(dir, tensors, c.at("tensor").get<std::string>());
        out.concepts.emplace(cv.parent_id, std::move(cv));
    }
    return out;
}

}  // namespace lhe
