// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
//
// lhe: learn per-depth linear maps between child and parent hidden states,
// derive concept vectors, and run the evaluation/analysis commands.

#include <cstdlib>
#include <iostream>
#include <string>

#include "lhe/pipeline.hpp"
#include "lhe/remote_backend.hpp"
#include "lhe/version.hpp"

#include <CLI11.hpp>

namespace {

struct CliOverrides {
    std::string config_path;
    long long seed = -1;
    int rank = -2;
    int subject_layer = -2;
    int object_layer = -2;
    double beta = std::numeric_limits<double>::quiet_NaN();
    std::string out;
};

void add_common_options(CLI::App* cmd, CliOverrides& ov) {
    cmd->add_option("--config", ov.config_path, "run configuration JSON");
    cmd->add_option("--seed", ov.seed, "use a single seed instead of the config's list");
    cmd->add_option("--rank", ov.rank, "pseudo-inverse rank (0 = full)");
    cmd->add_option("--subject-layer", ov.subject_layer, "layer for child representations");
    cmd->add_option("--object-layer", ov.object_layer, "layer for parent representations");
    cmd->add_option("--beta", ov.beta, "steering strength");
    cmd->add_option("--out", ov.out, "output directory");
}

lhe::RunConfig resolve_config(const CliOverrides& ov) {
    lhe::RunConfig cfg;
    if (!ov.config_path.empty()) cfg = lhe::load_config(ov.config_path);
    if (ov.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(ov.seed)};
    if (ov.rank != -2) cfg.rank = ov.rank;
    if (ov.subject_layer != -2) cfg.subject_layer = ov.subject_layer;
    if (ov.object_layer != -2) cfg.object_layer = ov.object_layer;
    if (!std::isnan(ov.beta)) cfg.beta = ov.beta;
    if (!ov.out.empty()) cfg.out_dir = ov.out;
    if (cfg.backend.kind == "remote" && cfg.backend.url.empty()) {
        if (const char* url = std::getenv("LHE_BACKEND_URL")) cfg.backend.url = url;
    }
    return cfg;
}

lhe::PipelineContext build_context(const lhe::RunConfig& cfg) {
    if (cfg.backend.kind == "remote") {
        lhe::validate_config(cfg);
        return lhe::make_context(cfg, std::make_unique<lhe::RemoteBackend>(cfg.backend.url));
    }
    return lhe::make_context(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"linear hierarchical encoding toolkit"};
    app.set_version_flag("--version", std::string(lhe::kVersion));
    app.require_subcommand(1);

    CliOverrides ov;
    lhe::SweepRequest sweep_req;
    std::string sweep_grid;
    bool tda_log1p = false;

    auto* filter = app.add_subcommand("filter", "keep triples the model answers correctly");
    auto* extract = app.add_subcommand("extract", "write an activation dump for all triples");
    auto* train = app.add_subcommand("train", "estimate maps and concept dictionaries");
    auto* eval = app.add_subcommand("eval", "accuracy/causality for lhe and baselines");
    auto* sweep = app.add_subcommand("sweep", "rank or layer sweep");
    auto* transfer = app.add_subcommand("transfer", "cross-domain transfer matrix");
    auto* overlap = app.add_subcommand("overlap", "subspace overlap between maps");
    auto* pca = app.add_subcommand("pca", "2-D concept-vector coordinates");
    auto* tda = app.add_subcommand("tda", "persistence-diagram similarity matrix");
    for (auto* cmd : {filter, extract, train, eval, sweep, transfer, overlap, pca, tda})
        add_common_options(cmd, ov);
    sweep->add_option("--axis", sweep_req.axis, "rank | subject | object")
        ->check(CLI::IsMember({"rank", "subject", "object"}));
    sweep->add_option("--grid", sweep_grid, "comma-separated grid values");
    sweep->add_flag("--full-grid", sweep_req.full_grid, "layer sweeps: every layer, not every other");
    tda->add_flag("--log1p", tda_log1p, "apply log1p to the displayed matrix");

    CLI11_PARSE(app, argc, argv);

    try {
        const lhe::RunConfig cfg = resolve_config(ov);
        auto ctx = build_context(cfg);
        if (filter->parsed()) return lhe::cmd_filter(ctx);
        if (extract->parsed()) return lhe::cmd_extract(ctx);
        if (train->parsed()) return lhe::cmd_train(ctx);
        if (eval->parsed()) return lhe::cmd_eval(ctx);
        if (sweep->parsed()) {
            if (!sweep_grid.empty()) {
                for (const auto& tok : lhe::split_whitespace([&] {
                         std::string s = sweep_grid;
                         for (auto& c : s)
                             if (c == ',') c = ' ';
                         return s;
                     }()))
                    sweep_req.grid.push_back(std::stoi(tok));
            }
            return lhe::cmd_sweep(ctx, sweep_req);
        }
        if (transfer->parsed()) return lhe::cmd_transfer(ctx);
        if (overlap->parsed()) return lhe::cmd_overlap(ctx);
        if (pca->parsed()) return lhe::cmd_pca(ctx);
        if (tda->parsed()) return lhe::cmd_tda(ctx, tda_log1p);
    } catch (const lhe::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
