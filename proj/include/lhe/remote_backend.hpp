// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <mutex>
#include <string>
#include <vector>

// Eigen must precede httplib: httplib's system includes leak macros that
// corrupt Eigen's product kernels.
#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/io.hpp"

#include <httplib.h>
#include <json.hpp>

namespace lhe {

namespace wire {

inline nlohmann::json extraction_to_json(const ExtractionRequest& req) {
    return {{"prompt", req.prompt},
            {"subject_begin", req.subject_begin},
            {"subject_end", req.subject_end},
            {"object_text", req.object_text},
            {"subject_layer", req.subject_layer},
            {"object_layer", req.object_layer},
            {"triple_id", req.triple_id}};
}

inline ExtractionRequest extraction_from_json(const nlohmann::json& j) {
    ExtractionRequest req;
    req.prompt = j.at("prompt").get<std::string>();
    req.subject_begin = j.at("subject_begin").get<std::size_t>();
    req.subject_end = j.at("subject_end").get<std::size_t>();
    req.object_text = j.at("object_text").get<std::string>();
    req.subject_layer = j.at("subject_layer").get<int>();
    req.object_layer = j.at("object_layer").get<int>();
    req.triple_id = j.value("triple_id", "");
    return req;
}

inline nlohmann::json scored_to_json(const std::vector<ScoredCandidate>& scored) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : scored)
        arr.push_back({{"text", s.text}, {"score", s.score}, {"token_probs", s.token_probs}});
    return {{"candidates", arr}};
}

inline std::vector<ScoredCandidate> scored_from_json(const nlohmann::json& j) {
    std::vector<ScoredCandidate> out;
    for (const auto& c : j.at("candidates")) {
        ScoredCandidate s;
        s.text = c.at("text").get<std::string>();
        s.score = c.at("score").get<double>();
        s.token_probs = c.at("token_probs").get<std::vector<double>>();
        out.push_back(std::move(s));
    }
    return out;
}

inline std::string vec_b64(const Vector& v) { return base64_encode_f32(to_f32(v)); }
inline std::string mat_b64(const Matrix& m) { return base64_encode_f32(to_f32(m)); }

inline Vector vec_from_b64(const std::string& b64) { return vector_from_f32(base64_decode_f32(b64)); }

inline Matrix mat_from_b64(const std::string& b64, Eigen::Index rows, Eigen::Index cols) {
    return matrix_from_f32(base64_decode_f32(b64), rows, cols);
}

}  // namespace wire

// HTTP+JSON client for a model served elsewhere. Tensor payloads are
// base64-encoded f32le, row-major.
class RemoteBackend : public Backend {
public:
    explicit RemoteBackend(const std::string& base_url) : url_(base_url), client_(base_url) {
        client_.set_read_timeout(120, 0);
        auto res = [&] {
            std::lock_guard<std::mutex> lock(mutex_);
            return client_.Get("/info");
        }();
        require(res && res->status == 200, ErrorKind::RemoteFailure,
                "GET " + url_ + "/info failed: " + (res ? std::to_string(res->status) : "no response"));
        const auto info = parse(res->body, "/info");
        model_ = info.at("model").get<std::string>();
        width_ = info.at("hidden_width").get<int>();
        layers_ = info.at("layer_count").get<int>();
        const auto& caps = info.at("capabilities");
        caps_.extraction = caps.value("extraction", false);
        caps_.scoring = caps.value("scoring", false);
        caps_.steering = caps.value("steering", false);
        caps_.jacobian_analytic = caps.value("jacobian_analytic", false);
        caps_.jacobian_finite_difference = caps.value("jacobian_finite_difference", false);
    }

    std::string model_name() const override { return model_; }
    int hidden_width() const override { return width_; }
    int layer_count() const override { return layers_; }
    Capabilities capabilities() const override { return caps_; }

    SubjectObjectSample extract_sample(const ExtractionRequest& req) const override {
        const auto body = post("/activations", wire::extraction_to_json(req));
        SubjectObjectSample s;
        s.subject_vec = wire::vec_from_b64(body.at("subject").get<std::string>());
        s.object_vec = wire::vec_from_b64(body.at("object").get<std::string>());
        s.subject_layer = req.subject_layer;
        s.object_layer = req.object_layer;
        s.triple_ref.subject_id = req.triple_id;
        return s;
    }

    std::pair<Matrix, Vector> jacobian_bias(const ExtractionRequest& req,
                                            JacobianMethod method) const override {
        auto j = wire::extraction_to_json(req);
        j["method"] = method == JacobianMethod::Analytic ? "analytic" : "finite_difference";
        const auto body = post("/jacobian", j);
        const auto d_o = body.at("d_o").get<Eigen::Index>();
        const auto d_s = body.at("d_s").get<Eigen::Index>();
        return {wire::mat_from_b64(body.at("jacobian").get<std::string>(), d_o, d_s),
                wire::vec_from_b64(body.at("bias").get<std::string>())};
    }

    std::vector<ScoredCandidate> next_token_distribution(
        const std::string& prompt, const std::vector<std::string>& candidates) const override {
        return wire::scored_from_json(post("/score", {{"prompt", prompt}, {"candidates", candidates}}));
    }

    std::vector<ScoredCandidate> steered_distribution(
        const std::string& prompt, const EditRequest& edit,
        const std::vector<std::string>& candidates) const override {
        nlohmann::json j{{"prompt", prompt},
                         {"candidates", candidates},
                         {"edit",
                          {{"direction", wire::vec_b64(edit.direction)},
                           {"beta", edit.beta},
                           {"subject_begin", edit.subject_begin},
                           {"subject_end", edit.subject_end}}}};
        return wire::scored_from_json(post("/score_steered", j));
    }

private:
    static nlohmann::json parse(const std::string& body, const std::string& endpoint) {
        try {
            return nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::RemoteFailure, endpoint + " returned unparsable JSON: " + e.what());
        }
    }

    nlohmann::json post(const std::string& endpoint, const nlohmann::json& body) const {
        // one request at a time: the underlying client shares a connection
        auto res = [&] {
            std::lock_guard<std::mutex> lock(mutex_);
            return client_.Post(endpoint, body.dump(), "application/json");
        }();
        require(res != nullptr, ErrorKind::RemoteFailure, "POST " + url_ + endpoint + ": no response");
        const auto parsed = parse(res->body, endpoint);
        if (res->status != 200)
            fail(ErrorKind::RemoteFailure,
                 "POST " + url_ + endpoint + " -> " + std::to_string(res->status) + ": " +
                     parsed.value("error", res->body));
        return parsed;
    }

    std::string url_;
    mutable std::mutex mutex_;
    mutable httplib::Client client_;
    std::string model_;
    int width_ = 0;
    int layers_ = 0;
    Capabilities caps_;
};

// Serves any Backend over the same wire format; the counterpart of
// RemoteBackend, and the reference for external hosts.
inline void bind_backend_routes(httplib::Server& server, const Backend& backend) {
    auto guarded = [&backend](auto fn) {
        return [fn, &backend](const httplib::Request& req, httplib::Response& res) {
            try {
                const nlohmann::json body =
                    req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
                res.set_content(fn(backend, body).dump(), "application/json");
            } catch (const Error& e) {
                res.status = 400;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 500;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            }
        };
    };

    server.Get("/info", [&backend](const httplib::Request&, httplib::Response& res) {
        const auto caps = backend.capabilities();
        nlohmann::json info{{"model", backend.model_name()},
                            {"hidden_width", backend.hidden_width()},
                            {"layer_count", backend.layer_count()},
                            {"capabilities",
                             {{"extraction", caps.extraction},
                              {"scoring", caps.scoring},
                              {"steering", caps.steering},
                              {"jacobian_analytic", caps.jacobian_analytic},
                              {"jacobian_finite_difference", caps.jacobian_finite_difference}}}};
        res.set_content(info.dump(), "application/json");
    });

    server.Post("/activations", guarded([](const Backend& b, const nlohmann::json& j) {
        const auto s = b.extract_sample(wire::extraction_from_json(j));
        return nlohmann::json{{"subject", wire::vec_b64(s.subject_vec)},
                              {"object", wire::vec_b64(s.object_vec)},
                              {"width", s.subject_vec.size()}};
    }));

    server.Post("/jacobian", guarded([](const Backend& b, const nlohmann::json& j) {
        const auto method = j.value("method", "analytic") == std::string("finite_difference")
                                ? JacobianMethod::FiniteDifference
                                : JacobianMethod::Analytic;
        const auto [jac, bias] = b.jacobian_bias(wire::extraction_from_json(j), method);
        return nlohmann::json{{"jacobian", wire::mat_b64(jac)},
                              {"bias", wire::vec_b64(bias)},
                              {"d_o", jac.rows()},
                              {"d_s", jac.cols()}};
    }));

    server.Post("/score", guarded([](const Backend& b, const nlohmann::json& j) {
        return wire::scored_to_json(b.next_token_distribution(
            j.at("prompt").get<std::string>(), j.at("candidates").get<std::vector<std::string>>()));
    }));

    server.Post("/score_steered", guarded([](const Backend& b, const nlohmann::json& j) {
        const auto& e = j.at("edit");
        EditRequest edit;
        edit.direction = wire::vec_from_b64(e.at("direction").get<std::string>());
        edit.beta = e.at("beta").get<double>();
        edit.subject_begin = e.at("subject_begin").get<std::size_t>();
        edit.subject_end = e.at("subject_end").get<std::size_t>();
        return wire::scored_to_json(b.steered_distribution(
            j.at("prompt").get<std::string>(), edit, j.at("candidates").get<std::vector<std::string>>()));
    }));
}

}  // namespace lhe
