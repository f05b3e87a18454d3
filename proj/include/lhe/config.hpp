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
#include "lhe/taxonomy.hpp"

namespace lhe {

struct ModelDefaults {
    int subject_layer = 0;
    int object_layer = 0;
    int rank = 0;
};

// Grid-searched per-model settings; configs name a model to inherit them.
inline const std::map<std::string, ModelDefaults>& model_defaults() {
    static const std::map<std::string, ModelDefaults> table{
        {"llama-3.2-3b", {12, 15, 128}},
        {"llama-3.1-8b", {12, 21, 160}},
        {"qwen3-8b", {20, 27, 192}},
        {"qwen3-14b", {25, 28, 256}},
        {"toy", {2, 5, 0}},  // rank 0 = full
    };
    return table;
}

struct BackendConfig {
    std::string kind = "toy";  // toy | dump | remote
    std::string url;           // remote
    std::string dump_dir;      // dump
    // toy parameters
    int toy_width = 64;
    int toy_layers = 6;
    std::uint64_t toy_seed = 1234;
    double toy_child_sigma = 0.1;
    double toy_layer_scale = 0.25;
    double toy_nonlinearity = 0.0;
    int toy_signal_layer = 0;
    double toy_post_signal_noise = 0.0;
    std::string toy_rig_option;
};

struct DatasetConfig {
    std::string domain;
    std::string path;
    std::set<std::string> train_roots;  // empty = seeded fraction pick
};

struct BaselineCloudConfig {
    std::string name;
    std::string kind = "gaussian";  // gaussian | nouns
    std::string nouns_path;         // one noun per line
};

struct RunConfig {
    std::string model = "toy";
    BackendConfig backend;
    std::vector<DatasetConfig> datasets;
    int subject_layer = -1;  // -1 = model default
    int object_layer = -1;
    int rank = -1;  // -1 = model default, 0 = full
    int n_train = 8;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    int fewshot = 5;
    int option_count = 4;
    double beta = 1.0;
    double train_root_fraction = 0.6;
    std::size_t max_causality_cases = 0;  // 0 = all
    bool filter_before_train = false;
    TemplateKind extraction_template = TemplateKind::CompletionTemplate;
    std::vector<BaselineCloudConfig> tda_baselines;
    std::string out_dir = "out";

    int resolved_subject_layer() const { return subject_layer >= 0 ? subject_layer : lookup().subject_layer; }
    int resolved_object_layer() const { return object_layer >= 0 ? object_layer : lookup().object_layer; }
    int resolved_rank() const { return rank >= 0 ? rank : lookup().rank; }

private:
    const ModelDefaults& lookup() const {
        auto it = model_defaults().find(model);
        require(it != model_defaults().end(), ErrorKind::InvalidArgument,
                "no defaults for model '" + model + "'; set layers and rank explicitly");
        return it->second;
    }
};

inline void validate_config(const RunConfig& cfg) {
    require(!cfg.seeds.empty(), ErrorKind::InvalidArgument, "config needs at least one seed");
    require(cfg.n_train >= 1, ErrorKind::InvalidArgument, "n_train must be >= 1");
    require(cfg.fewshot >= 0, ErrorKind::InvalidArgument, "fewshot must be >= 0");
    require(cfg.option_count >= 2, ErrorKind::InvalidArgument, "option_count must be >= 2");
    require(cfg.rank >= -1, ErrorKind::InvalidArgument, "rank must be -1 (default), 0 (full) or positive");
    require(!cfg.datasets.empty(), ErrorKind::InvalidArgument, "config names no datasets");
    require(cfg.train_root_fraction > 0.0 && cfg.train_root_fraction < 1.0, ErrorKind::InvalidArgument,
            "train_root_fraction must be in (0, 1)");
    if (cfg.backend.kind == "remote")
        require(!cfg.backend.url.empty(), ErrorKind::InvalidArgument,
                "remote backend needs a url (flag, config, or LHE_BACKEND_URL)");
    if (cfg.backend.kind == "dump")
        require(!cfg.backend.dump_dir.empty(), ErrorKind::InvalidArgument,
                "dump backend needs a dump_dir");
    require(cfg.backend.kind == "toy" || cfg.backend.kind == "dump" || cfg.backend.kind == "remote",
            ErrorKind::InvalidArgument, "unknown backend kind '" + cfg.backend.kind + "'");
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.model = j.value("model", cfg.model);
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        cfg.backend.kind = b.value("kind", cfg.backend.kind);
        cfg.backend.url = b.value("url", cfg.backend.url);
        cfg.backend.dump_dir = b.value("dump_dir", cfg.backend.dump_dir);
        cfg.backend.toy_width = b.value("toy_width", cfg.backend.toy_width);
        cfg.backend.toy_layers = b.value("toy_layers", cfg.backend.toy_layers);
        cfg.backend.toy_seed = b.value("toy_seed", cfg.backend.toy_seed);
        cfg.backend.toy_child_sigma = b.value("toy_child_sigma", cfg.backend.toy_child_sigma);
        cfg.backend.toy_layer_scale = b.value("toy_layer_scale", cfg.backend.toy_layer_scale);
        cfg.backend.toy_nonlinearity = b.value("toy_nonlinearity", cfg.backend.toy_nonlinearity);
        cfg.backend.toy_signal_layer = b.value("toy_signal_layer", cfg.backend.toy_signal_layer);
        cfg.backend.toy_post_signal_noise =
            b.value("toy_post_signal_noise", cfg.backend.toy_post_signal_noise);
        cfg.backend.toy_rig_option = b.value("toy_rig_option", cfg.backend.toy_rig_option);
    }
    for (const auto& d : j.value("datasets", nlohmann::json::array())) {
        DatasetConfig ds;
        ds.domain = d.at("domain").get<std::string>();
        ds.path = d.at("path").get<std::string>();
        for (const auto& r : d.value("train_roots", nlohmann::json::array()))
            ds.train_roots.insert(r.get<std::string>());
        cfg.datasets.push_back(std::move(ds));
    }
    cfg.subject_layer = j.value("subject_layer", cfg.subject_layer);
    cfg.object_layer = j.value("object_layer", cfg.object_layer);
    cfg.rank = j.value("rank", cfg.rank);
    cfg.n_train = j.value("n_train", cfg.n_train);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.fewshot = j.value("fewshot", cfg.fewshot);
    cfg.option_count = j.value("option_count", cfg.option_count);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.train_root_fraction = j.value("train_root_fraction", cfg.train_root_fraction);
    cfg.max_causality_cases = j.value("max_causality_cases", cfg.max_causality_cases);
    cfg.filter_before_train = j.value("filter_before_train", cfg.filter_before_train);
    if (j.contains("extraction_template"))
        cfg.extraction_template = j.at("extraction_template").get<std::string>() == "qa-multiple-choice"
                                      ? TemplateKind::QaMultipleChoice
                                      : TemplateKind::CompletionTemplate;
    for (const auto& b : j.value("tda_baselines", nlohmann::json::array())) {
        BaselineCloudConfig bc;
        bc.name = b.at("name").get<std::string>();
        bc.kind = b.value("kind", bc.kind);
        bc.nouns_path = b.value("nouns_path", bc.nouns_path);
        cfg.tda_baselines.push_back(std::move(bc));
    }
    cfg.out_dir = j.value("out", cfg.out_dir);
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_json(nlohmann::json::parse(read_text(path)));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseFailure, path.string() + ": " + e.what());
    }
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json datasets = nlohmann::json::array();
    for (const auto& d : cfg.datasets) {
        nlohmann::json roots = nlohmann::json::array();
        for (const auto& r : d.train_roots) roots.push_back(r);
        datasets.push_back({{"domain", d.domain}, {"path", d.path}, {"train_roots", roots}});
    }
    nlohmann::json baselines = nlohmann::json::array();
    for (const auto& b : cfg.tda_baselines)
        baselines.push_back({{"name", b.name}, {"kind", b.kind}, {"nouns_path", b.nouns_path}});
    return nlohmann::json{
        {"model", cfg.model},
        {"backend",
         {{"kind", cfg.backend.kind},
          {"url", cfg.backend.url},
          {"dump_dir", cfg.backend.dump_dir},
          {"toy_width", cfg.backend.toy_width},
          {"toy_layers", cfg.backend.toy_layers},
          {"toy_seed", cfg.backend.toy_seed},
          {"toy_child_sigma", cfg.backend.toy_child_sigma},
          {"toy_layer_scale", cfg.backend.toy_layer_scale},
          {"toy_nonlinearity", cfg.backend.toy_nonlinearity},
          {"toy_signal_layer", cfg.backend.toy_signal_layer},
          {"toy_post_signal_noise", cfg.backend.toy_post_signal_noise},
          {"toy_rig_option", cfg.backend.toy_rig_option}}},
        {"datasets", datasets},
        {"subject_layer", cfg.subject_layer},
        {"object_layer", cfg.object_layer},
        {"rank", cfg.rank},
        {"n_train", cfg.n_train},
        {"seeds", cfg.seeds},
        {"fewshot", cfg.fewshot},
        {"option_count", cfg.option_count},
        {"beta", cfg.beta},
        {"train_root_fraction", cfg.train_root_fraction},
        {"max_causality_cases", cfg.max_causality_cases},
        {"filter_before_train", cfg.filter_before_train},
        {"extraction_template", cfg.extraction_template == TemplateKind::QaMultipleChoice
                                    ? "qa-multiple-choice"
                                    : "completion-template"},
        {"tda_baselines", baselines},
        {"out", cfg.out_dir}};
}

}  // namespace lhe
