// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/io.hpp"

namespace lhe {

inline constexpr int kDumpFormatVersion = 1;

// Writes per-triple subject/object vectors (and optional per-sample
// Jacobians) as an activation-dump directory: manifest.json plus one raw
// f32le file per tensor, row-major.
class DumpWriter {
public:
    DumpWriter(std::filesystem::path dir, std::string model, int hidden_width, int layer_count)
        : dir_(std::move(dir)), model_(std::move(model)), width_(hidden_width), layers_(layer_count) {
        std::filesystem::create_directories(dir_);
    }

    void add(const SubjectObjectSample& s) {
        require(!s.triple_ref.id().empty(), ErrorKind::InvalidArgument, "sample lacks a triple id");
        const std::string stem = "s" + std::to_string(samples_.size());
        nlohmann::json sample{{"triple_id", s.triple_ref.id()},
                              {"subject_layer", s.subject_layer},
                              {"object_layer", s.object_layer},
                              {"subject", stem + "_subject"},
                              {"object", stem + "_object"}};
        write_vec(stem + "_subject", s.subject_vec);
        write_vec(stem + "_object", s.object_vec);
        if (s.jacobian && s.bias) {
            write_mat(stem + "_jacobian", *s.jacobian);
            write_vec(stem + "_bias", *s.bias);
            sample["jacobian"] = stem + "_jacobian";
            sample["bias"] = stem + "_bias";
        }
        samples_.push_back(std::move(sample));
    }

    void finish() {
        nlohmann::json manifest{{"format_version", kDumpFormatVersion},
                                {"model", model_},
                                {"hidden_width", width_},
                                {"layer_count", layers_},
                                {"dtype", "f32le"},
                                {"samples", samples_},
                                {"tensors", tensors_}};
        write_text_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
    }

private:
    void write_vec(const std::string& name, const Vector& v) {
        write_f32le(dir_ / (name + ".f32"), to_f32(v));
        tensors_[name] = {{"file", name + ".f32"}, {"shape", {v.size()}}};
    }
    void write_mat(const std::string& name, const Matrix& m) {
        write_f32le(dir_ / (name + ".f32"), to_f32(m));
        tensors_[name] = {{"file", name + ".f32"}, {"shape", {m.rows(), m.cols()}}};
    }

    std::filesystem::path dir_;
    std::string model_;
    int width_ = 0;
    int layers_ = 0;
    nlohmann::json samples_ = nlohmann::json::array();
    nlohmann::json tensors_ = nlohmann::json::object();
};

// Read side: serves stored tensors by triple id. Cannot score or steer.
class DumpBackend : public Backend {
public:
    explicit DumpBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
        nlohmann::json manifest;
        try {
            manifest = nlohmann::json::parse(read_text(dir_ / "manifest.json"));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::ParseFailure, (dir_ / "manifest.json").string() + ": " + e.what());
        }
        require(manifest.value("format_version", -1) == kDumpFormatVersion, ErrorKind::VersionMismatch,
                "unsupported dump format version");
        require(manifest.value("dtype", "") == "f32le", ErrorKind::VersionMismatch,
                "unsupported dump dtype");
        model_ = manifest.value("model", "");
        width_ = manifest.at("hidden_width").get<int>();
        layers_ = manifest.at("layer_count").get<int>();
        tensors_ = manifest.at("tensors");
        for (const auto& s : manifest.at("samples")) {
            const auto id = s.at("triple_id").get<std::string>();
            require(samples_.emplace(id, s).second, ErrorKind::IntegrityError,
                    "duplicate triple id '" + id + "' in dump");
            if (s.contains("jacobian")) has_jacobians_ = true;
        }
    }

    std::string model_name() const override { return model_; }
    int hidden_width() const override { return width_; }
    int layer_count() const override { return layers_; }

    Capabilities capabilities() const override {
        Capabilities c;
        c.extraction = true;
        c.jacobian_analytic = has_jacobians_;
        return c;
    }

    SubjectObjectSample extract_sample(const ExtractionRequest& req) const override {
        const auto& s = sample_record(req.triple_id);
        check_layers(s, req);
        SubjectObjectSample out;
        out.subject_vec = load_vec(s.at("subject").get<std::string>());
        out.object_vec = load_vec(s.at("object").get<std::string>());
        out.subject_layer = req.subject_layer;
        out.object_layer = req.object_layer;
        out.triple_ref.subject_id = req.triple_id;
        return out;
    }

    std::pair<Matrix, Vector> jacobian_bias(const ExtractionRequest& req,
                                            JacobianMethod method) const override {
        require(method == JacobianMethod::Analytic, ErrorKind::CapabilityMissing,
                "dump backends cannot finite-difference; enable the remote fallback instead");
        const auto& s = sample_record(req.triple_id);
        check_layers(s, req);
        require(s.contains("jacobian") && s.contains("bias"), ErrorKind::CapabilityMissing,
                "dump has no stored jacobian for triple '" + req.triple_id + "'");
        return {load_mat(s.at("jacobian").get<std::string>()), load_vec(s.at("bias").get<std::string>())};
    }

    std::vector<ScoredCandidate> next_token_distribution(
        const std::string&, const std::vector<std::string>&) const override {
        fail(ErrorKind::CapabilityMissing, "dump backends cannot score candidates");
    }

    std::vector<ScoredCandidate> steered_distribution(const std::string&, const EditRequest&,
                                                      const std::vector<std::string>&) const override {
        fail(ErrorKind::CapabilityMissing, "dump backends cannot steer");
    }

private:
    const nlohmann::json& sample_record(const std::string& triple_id) const {
        auto it = samples_.find(triple_id);
        require(it != samples_.end(), ErrorKind::MissingArtifact,
                "dump has no sample for triple '" + triple_id + "'");
        return it->second;
    }

    void check_layers(const nlohmann::json& s, const ExtractionRequest& req) const {
        require(s.at("subject_layer").get<int>() == req.subject_layer &&
                    s.at("object_layer").get<int>() == req.object_layer,
                ErrorKind::InvalidArgument,
                "dump for triple '" + req.triple_id + "' was captured at layers (" +
                    std::to_string(s.at("subject_layer").get<int>()) + ", " +
                    std::to_string(s.at("object_layer").get<int>()) + ")");
    }

    Vector load_vec(const std::string& name) const {
        const auto& t = tensors_.at(name);
        const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
        require(shape.size() == 1, ErrorKind::IntegrityError, "tensor '" + name + "' is not a vector");
        return vector_from_f32(
            read_f32le(dir_ / t.at("file").get<std::string>(), static_cast<std::size_t>(shape[0])));
    }

    Matrix load_mat(const std::string& name) const {
        const auto& t = tensors_.at(name);
        const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
        require(shape.size() == 2, ErrorKind::IntegrityError, "tensor '" + name + "' is not a matrix");
        return matrix_from_f32(
            read_f32le(dir_ / t.at("file").get<std::string>(),
                       static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1])),
            shape[0], shape[1]);
    }

    std::filesystem::path dir_;
    std::string model_;
    int width_ = 0;
    int layers_ = 0;
    bool has_jacobians_ = false;
    nlohmann::json tensors_;
    std::map<std::string, nlohmann::json> samples_;
};

}  // namespace lhe
