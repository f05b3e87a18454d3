// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "lhe/backend.hpp"
#include "lhe/common.hpp"
#include "lhe/config.hpp"
#include "lhe/dump_backend.hpp"
#include "lhe/encoder.hpp"
#include "lhe/eval.hpp"
#include "lhe/filter.hpp"
#include "lhe/geometry.hpp"
#include "lhe/io.hpp"
#include "lhe/report.hpp"
#include "lhe/sampling.hpp"
#include "lhe/taxonomy.hpp"
#include "lhe/topology.hpp"
#include "lhe/toy_backend.hpp"
#include "lhe/version.hpp"

namespace lhe {

// ---------------------------------------------------------------------------
// run manifest
// ---------------------------------------------------------------------------

class RunManifest {
public:
    RunManifest(const std::filesystem::path& out_dir, const RunConfig& cfg)
        : file_(out_dir / "run_manifest.json") {
        if (std::filesystem::exists(file_)) {
            try {
                doc_ = nlohmann::json::parse(read_text(file_));
            } catch (const nlohmann::json::exception&) {
                doc_ = nlohmann::json::object();
            }
        }
        doc_["tool_version"] = kVersion;
        doc_["config"] = config_to_json(cfg);
        if (!doc_.contains("inputs")) doc_["inputs"] = nlohmann::json::object();
        if (!doc_.contains("artifacts")) doc_["artifacts"] = nlohmann::json::object();
        if (!doc_.contains("stages")) doc_["stages"] = nlohmann::json::object();
    }

    void record_input(const std::filesystem::path& p) {
        doc_["inputs"][p.string()] = Sha256::of_file(p);
    }

    void record_artifact(const std::filesystem::path& p) {
        doc_["artifacts"][p.string()] = Sha256::of_file(p);
    }

    void set_stage(const std::string& stage, const std::string& status) {
        doc_["stages"][stage] = {{"status", status}, {"at", now_iso()}};
    }

    void save() { write_text_atomic(file_, doc_.dump(2) + "\n"); }

private:
    static std::string now_iso() {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
        return buf;
    }

    std::filesystem::path file_;
    nlohmann::json doc_;
};

// ---------------------------------------------------------------------------
// context
// ---------------------------------------------------------------------------

struct LoadedDomain {
    DatasetConfig dataset;
    HierarchyTree tree;
    std::vector<Triple> triples;
    SplitPlan split;
};

struct RelationJob {
    RelationId relation;
    std::vector<Triple> train;
    std::vector<Triple> test;
};

struct PipelineContext {
    RunConfig cfg;
    std::unique_ptr<Backend> backend;
    ToyModel* toy = nullptr;  // set when the backend is the planted toy
    std::vector<LoadedDomain> domains;
    std::filesystem::path out;
};

inline PromptSpec make_prompt_spec(const RunConfig& cfg, const std::vector<Triple>& train,
                                   const RelationId& relation, std::uint64_t seed,
                                   TemplateKind kind) {
    PromptSpec spec;
    spec.template_kind = kind;
    spec.fewshot_count = cfg.fewshot;
    spec.option_count = cfg.option_count;
    spec.seed = seed;
    spec.fewshot_examples = sample_fewshot(train, relation, cfg.fewshot, seed);
    return spec;
}

// `external` supplies a ready-made backend (the remote client lives in its
// own header so the pipeline does not drag HTTP machinery everywhere).
inline PipelineContext make_context(const RunConfig& cfg,
                                    std::unique_ptr<Backend> external = nullptr) {
    validate_config(cfg);
    PipelineContext ctx;
    ctx.cfg = cfg;
    ctx.out = cfg.out_dir;

    for (const auto& ds : cfg.datasets) {
        LoadedDomain dom;
        dom.dataset = ds;
        dom.tree = load_hierarchy(ds.path);
        require(dom.tree.domain == ds.domain || ds.domain.empty(), ErrorKind::InvalidArgument,
                "dataset file declares domain '" + dom.tree.domain + "' but config says '" + ds.domain +
                    "'");
        dom.triples = derive_triples(dom.tree);
        const auto roots = ds.train_roots.empty()
                               ? pick_train_roots(dom.tree, cfg.train_root_fraction, 17)
                               : ds.train_roots;
        dom.split = split_by_root(dom.tree, roots);
        ctx.domains.push_back(std::move(dom));
    }

    if (external) {
        ctx.backend = std::move(external);
    } else if (cfg.backend.kind == "toy") {
        ToyConfig tc;
        tc.width = cfg.backend.toy_width;
        tc.layers = cfg.backend.toy_layers;
        tc.seed = cfg.backend.toy_seed;
        tc.layer_scale = cfg.backend.toy_layer_scale;
        tc.nonlinearity = cfg.backend.toy_nonlinearity;
        tc.signal_layer = cfg.backend.toy_signal_layer;
        tc.post_signal_noise = cfg.backend.toy_post_signal_noise;
        tc.rig_option = cfg.backend.toy_rig_option;
        tc.name = cfg.model;
        auto toy = std::make_unique<ToyModel>(tc);
        for (std::size_t i = 0; i < ctx.domains.size(); ++i) {
            TreePlanting planting;
            planting.seed = fnv1a(ctx.domains[i].tree.domain, cfg.backend.toy_seed);
            planting.child_sigma = cfg.backend.toy_child_sigma;
            toy->add_tree(ctx.domains[i].tree, planting);
        }
        ctx.toy = toy.get();
        ctx.backend = std::move(toy);
    } else if (cfg.backend.kind == "dump") {
        ctx.backend = std::make_unique<DumpBackend>(cfg.backend.dump_dir);
    } else {
        fail(ErrorKind::InvalidArgument,
             "backend kind '" + cfg.backend.kind + "' needs a caller-constructed backend");
    }

    const int L = ctx.backend->layer_count();
    require(cfg.resolved_subject_layer() >= 0 && cfg.resolved_subject_layer() <= L &&
                cfg.resolved_object_layer() <= L &&
                cfg.resolved_subject_layer() <= cfg.resolved_object_layer(),
            ErrorKind::LayerOutOfRange, "configured layers exceed backend depth");

    if (cfg.filter_before_train) {
        require(ctx.backend->capabilities().scoring, ErrorKind::CapabilityMissing,
                "filter_before_train needs a backend that can score options");
        for (auto& dom : ctx.domains) {
            std::set<std::string> kept_ids;
            for (const auto& [key, triples] : group_by_relation(dom.triples)) {
                const PromptSpec spec =
                    make_prompt_spec(cfg, dom.split.train, triples.front().relation,
                                     cfg.seeds.front(), TemplateKind::QaMultipleChoice);
                for (const auto& t : filter_by_qa(triples, *ctx.backend, spec, dom.tree).kept)
                    kept_ids.insert(t.id());
            }
            auto prune = [&](std::vector<Triple>& v) {
                std::erase_if(v, [&](const Triple& t) { return kept_ids.count(t.id()) == 0; });
            };
            prune(dom.split.train);
            prune(dom.split.test);
        }
    }
    return ctx;
}

// Relations worth modelling: at least one train triple and at least two
// distinct test-side parents (a single-parent level has no decoding task).
inline std::vector<RelationJob> eligible_relations(const LoadedDomain& dom) {
    auto train_groups = group_by_relation(dom.split.train);
    auto test_groups = group_by_relation(dom.split.test);
    std::vector<RelationJob> jobs;
    for (auto& [key, test_triples] : test_groups) {
        auto it = train_groups.find(key);
        if (it == train_groups.end() || it->second.empty()) continue;
        std::set<std::string> parents;
        for (const auto& t : test_triples) parents.insert(t.object_id);
        if (parents.size() < 2) {
            std::cerr << "[lhe] skipping relation " << key << " (single test parent)\n";
            continue;
        }
        jobs.push_back({test_triples.front().relation, it->second, test_triples});
    }
    return jobs;
}

inline std::string relation_dir_name(const RelationId& r) {
    return std::string(to_string(r.kind)) + "_" + std::to_string(r.child_depth) + "-" +
           std::to_string(r.parent_depth);
}

// ---------------------------------------------------------------------------
// shared per-relation machinery
// ---------------------------------------------------------------------------

inline CollectOptions make_collect_options(const PromptSpec& spec, bool with_jacobian, int ls,
                                           int lo) {
    CollectOptions opt;
    opt.subject_layer = ls;
    opt.object_layer = lo;
    opt.with_jacobian = with_jacobian;
    opt.prompt_spec = spec;
    return opt;
}

// The seed-dependent choice of training triples for one relation.
inline std::vector<Triple> select_train_triples(const std::vector<Triple>& train,
                                                const RelationId& relation, int n_train,
                                                std::uint64_t seed) {
    if (static_cast<int>(train.size()) <= n_train) return train;
    Rng rng(fnv1a(relation.key(), seed ^ 0xe7037ed1a0b428dbULL));
    auto idx = rng.sample_without_replacement(train.size(), static_cast<std::size_t>(n_train));
    std::sort(idx.begin(), idx.end());
    std::vector<Triple> out;
    for (auto i : idx) out.push_back(train[i]);
    return out;
}

struct TrainedRelation {
    LinearRelationalMap map;
    RelationEvalSet eval_set;                           // test side
    std::map<std::string, ConceptVector> test_concepts; // test parents
    std::map<std::string, ConceptVector> all_concepts;  // every parent
    std::map<std::string, std::vector<Vector>> train_subjects_by_parent;
    std::vector<std::pair<Vector, std::string>> train_examples;  // for max-margin
};

inline TrainedRelation train_relation(const RunConfig& cfg, const Backend& backend,
                                      const LoadedDomain& dom, const RelationJob& job,
                                      std::uint64_t seed) {
    const int ls = cfg.resolved_subject_layer();
    const int lo = cfg.resolved_object_layer();
    const PromptSpec spec =
        make_prompt_spec(cfg, dom.split.train, job.relation, seed, cfg.extraction_template);

    TrainedRelation tr;
    const auto chosen = select_train_triples(job.train, job.relation, cfg.n_train, seed);
    const auto train_jac =
        collect_samples(backend, dom.tree, chosen, make_collect_options(spec, true, ls, lo));
    std::vector<SubjectObjectSample> train_samples;
    for (const auto& cs : train_jac) train_samples.push_back(cs.sample);
    MapMetadata meta{ls, lo, cfg.n_train, seed, backend.model_name()};
    tr.map = estimate_map(train_samples, job.relation, meta, cfg.n_train);
    const int full = static_cast<int>(tr.map.S.size());
    const int rank = cfg.resolved_rank() <= 0 ? full : std::min(cfg.resolved_rank(), full);
    tr.map.rank_k = rank;

    const auto test_collected = collect_samples(backend, dom.tree, job.test,
                                                make_collect_options(spec, false, ls, lo));
    tr.eval_set = build_eval_set(test_collected, dom.tree, job.relation);
    tr.test_concepts = lhe_concepts(tr.map, rank, tr.eval_set);

    const auto train_collected = collect_samples(backend, dom.tree, job.train,
                                                 make_collect_options(spec, false, ls, lo));
    std::map<std::string, std::vector<Vector>> all_objects = tr.eval_set.object_vecs_by_parent;
    for (const auto& cs : train_collected) {
        all_objects[cs.triple.object_id].push_back(cs.sample.object_vec);
        tr.train_subjects_by_parent[cs.triple.object_id].push_back(cs.sample.subject_vec);
        tr.train_examples.emplace_back(cs.sample.subject_vec, cs.triple.object_id);
    }
    tr.all_concepts = concept_vectors(pseudo_inverse(tr.map, rank), tr.map.b, all_objects, job.relation);
    return tr;
}

inline TrainedRelation train_relation(const PipelineContext& ctx, const LoadedDomain& dom,
                                      const RelationJob& job, std::uint64_t seed) {
    return train_relation(ctx.cfg, *ctx.backend, dom, job, seed);
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

inline void write_artifact(RunManifest& manifest, const std::filesystem::path& p,
                           const std::string& content) {
    write_text_atomic(p, content);
    manifest.record_artifact(p);
}

inline void record_artifact_dir(RunManifest& manifest, const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) manifest.record_artifact(f);
}

inline int cmd_filter(PipelineContext& ctx) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("filter", "running");
    const auto dir = ctx.out / "filter";
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        const auto groups = group_by_relation(dom.triples);
        std::vector<Triple> kept;
        std::vector<QaVerdict> verdicts;
        for (const auto& [key, triples] : groups) {
            const PromptSpec spec = make_prompt_spec(ctx.cfg, dom.split.train, triples.front().relation,
                                                     ctx.cfg.seeds.front(),
                                                     TemplateKind::QaMultipleChoice);
            auto result = filter_by_qa(triples, *ctx.backend, spec, dom.tree);
            kept.insert(kept.end(), result.kept.begin(), result.kept.end());
            verdicts.insert(verdicts.end(), result.verdicts.begin(), result.verdicts.end());
        }
        if (kept.empty())
            std::cerr << "[lhe] warning: no triples survived filtering in domain " << dom.tree.domain
                      << "\n";

        nlohmann::json kept_ids = nlohmann::json::array();
        for (const auto& t : kept) kept_ids.push_back(t.id());
        write_artifact(manifest, dir / (dom.tree.domain + "_kept.json"), kept_ids.dump(2) + "\n");
        write_artifact(manifest, dir / (dom.tree.domain + "_verdicts.csv"), verdicts_to_csv(verdicts));

        std::map<int, std::pair<int, int>> by_depth;  // depth -> (total, kept)
        for (const auto& t : dom.triples) by_depth[t.relation.child_depth].first++;
        for (const auto& t : kept) by_depth[t.relation.child_depth].second++;
        std::string summary = "depth,total,kept\n";
        for (const auto& [depth, counts] : by_depth)
            summary += std::to_string(depth) + "," + std::to_string(counts.first) + "," +
                       std::to_string(counts.second) + "\n";
        write_artifact(manifest, dir / (dom.tree.domain + "_summary.csv"), summary);
    }
    manifest.set_stage("filter", "done");
    manifest.save();
    return 0;
}

inline int cmd_extract(PipelineContext& ctx) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("extract", "running");
    const int ls = ctx.cfg.resolved_subject_layer();
    const int lo = ctx.cfg.resolved_object_layer();
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        const auto dump_dir = ctx.out / "dumps" / dom.tree.domain;
        DumpWriter writer(dump_dir, ctx.backend->model_name(), ctx.backend->hidden_width(),
                          ctx.backend->layer_count());
        const std::set<std::string> train_ids = [&] {
            std::set<std::string> s;
            for (const auto& t : dom.split.train) s.insert(t.id());
            return s;
        }();
        for (const auto& [key, triples] : group_by_relation(dom.triples)) {
            const PromptSpec spec = make_prompt_spec(ctx.cfg, dom.split.train, triples.front().relation,
                                                     ctx.cfg.seeds.front(), ctx.cfg.extraction_template);
            for (const auto& t : triples) {
                const bool with_jacobian =
                    train_ids.count(t.id()) > 0 && ctx.backend->capabilities().jacobian_analytic;
                auto cs = collect_one(*ctx.backend, dom.tree, t,
                                      make_collect_options(spec, with_jacobian, ls, lo));
                writer.add(cs.sample);
            }
        }
        writer.finish();
        record_artifact_dir(manifest, dump_dir);
    }
    manifest.set_stage("extract", "done");
    manifest.save();
    return 0;
}

inline int cmd_train(PipelineContext& ctx) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("train", "running");
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        for (const auto& job : eligible_relations(dom)) {
            for (auto seed : ctx.cfg.seeds) {
                const auto tr = train_relation(ctx, dom, job, seed);
                const auto dir = ctx.out / "maps" / dom.tree.domain / relation_dir_name(job.relation) /
                                 ("seed" + std::to_string(seed));
                save_map(dir, tr.map, tr.all_concepts);
                record_artifact_dir(manifest, dir);
            }
        }
    }
    manifest.set_stage("train", "done");
    manifest.save();
    return 0;
}

inline int cmd_eval(PipelineContext& ctx) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("eval", "running");
    const bool can_steer = ctx.backend->capabilities().steering;
    if (!can_steer)
        std::cerr << "[lhe] backend cannot steer; causality columns will be empty\n";
    EvalReport report;
    ScoreOptions score_opt;
    score_opt.beta = ctx.cfg.beta;
    score_opt.max_causality_cases = ctx.cfg.max_causality_cases;
    score_opt.with_causality = can_steer;

    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        for (auto seed : ctx.cfg.seeds) {
            score_opt.seed = seed;
            struct Agg {
                double acc = 0, caus = 0, chance = 0;
                int n = 0, caus_n = 0;
            };
            std::map<std::string, Agg> per_method;
            for (const auto& job : eligible_relations(dom)) {
                const auto tr = train_relation(ctx, dom, job, seed);
                const std::string rkey = job.relation.key();

                auto add_rows = [&](const std::string& method, const EvalOutcome& o) {
                    report.add(rkey, dom.tree.domain, method, "accuracy", o.accuracy, seed);
                    report.add(rkey, dom.tree.domain, method, "chance_corrected_accuracy",
                               chance_corrected_accuracy(o.accuracy, o.n_parents), seed);
                    if (!std::isnan(o.causality))
                        report.add(rkey, dom.tree.domain, method, "causality", o.causality, seed);
                    report.add(rkey, dom.tree.domain, method, "count", o.n_subjects, seed);
                    auto& agg = per_method[method];
                    agg.acc += o.accuracy;
                    agg.chance += chance_corrected_accuracy(o.accuracy, o.n_parents);
                    agg.n += 1;
                    if (!std::isnan(o.causality)) {
                        agg.caus += o.causality;
                        agg.caus_n += 1;
                    }
                };

                add_rows("lhe", score_dictionary(tr.test_concepts, tr.eval_set, ctx.backend.get(),
                                                 score_opt));

                const auto ia =
                    input_averaging_baseline(tr.eval_set.subject_vecs_by_parent, job.relation);
                add_rows("input-averaging",
                         score_dictionary(ia, tr.eval_set, ctx.backend.get(), score_opt));

                // max-margin trains on the train split plus a leaked slice of test
                MaxMarginConfig mm_cfg;
                mm_cfg.seed = seed;
                auto examples = tr.train_examples;
                const auto leak =
                    leak_indices(tr.eval_set.subjects.size(), mm_cfg.leak_fraction, seed);
                for (auto i : leak)
                    examples.emplace_back(tr.eval_set.subjects[i].a, tr.eval_set.subjects[i].gold_parent);
                const auto mm = maxmargin_baseline(examples, mm_cfg);
                EvalOutcome mm_out;
                mm_out.n_subjects = static_cast<int>(tr.eval_set.subjects.size());
                mm_out.n_parents = tr.eval_set.distinct_parents();
                int correct = 0;
                for (const auto& s : tr.eval_set.subjects)
                    if (mm.predict(s.a) == s.gold_parent) ++correct;
                mm_out.accuracy = double(correct) / double(tr.eval_set.subjects.size());
                if (can_steer) {
                    std::map<std::string, ConceptVector> dirs;
                    for (auto& [parent, cv] : mm.directions(job.relation))
                        if (tr.eval_set.object_vecs_by_parent.count(parent)) dirs.emplace(parent, cv);
                    if (dirs.size() >= 2) {
                        auto steer_out = score_dictionary(dirs, tr.eval_set, ctx.backend.get(), score_opt);
                        mm_out.causality = steer_out.causality;
                    }
                }
                add_rows("max-margin", mm_out);
            }
            for (const auto& [method, agg] : per_method) {
                if (agg.n == 0) continue;
                report.add("ALL", dom.tree.domain, method, "accuracy", agg.acc / agg.n, seed);
                report.add("ALL", dom.tree.domain, method, "chance_corrected_accuracy",
                           agg.chance / agg.n, seed);
                if (agg.caus_n > 0)
                    report.add("ALL", dom.tree.domain, method, "causality", agg.caus / agg.caus_n, seed);
            }
        }
    }
    write_artifact(manifest, ctx.out / "eval" / "report.csv", eval_report_csv(report));
    write_artifact(manifest, ctx.out / "eval" / "report.md", eval_report_markdown(report));
    manifest.set_stage("eval", "done");
    manifest.save();
    return 0;
}

struct SweepRequest {
    std::string axis = "rank";  // rank | subject | object
    std::vector<int> grid;      // empty = auto
    bool full_grid = false;     // layers: every layer instead of every other
};

inline int cmd_sweep(PipelineContext& ctx, const SweepRequest& req) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("sweep", "running");
    ScoreOptions score_opt;
    score_opt.beta = ctx.cfg.beta;
    score_opt.max_causality_cases = ctx.cfg.max_causality_cases;
    score_opt.with_causality = ctx.backend->capabilities().steering;

    std::vector<double> acc_sum, caus_sum;
    std::vector<int> acc_n, caus_n;
    std::vector<double> grid_values;
    std::string parameter;

    auto accumulate = [&](const SweepCurve& curve) {
        if (grid_values.empty()) {
            grid_values = curve.grid;
            parameter = curve.parameter;
            acc_sum.assign(grid_values.size(), 0);
            caus_sum.assign(grid_values.size(), 0);
            acc_n.assign(grid_values.size(), 0);
            caus_n.assign(grid_values.size(), 0);
        }
        require(curve.grid == grid_values, ErrorKind::InvalidArgument,
                "sweep grids differ across relations; pass an explicit --grid");
        for (std::size_t i = 0; i < curve.grid.size(); ++i) {
            if (!std::isnan(curve.accuracy[i])) {
                acc_sum[i] += curve.accuracy[i];
                acc_n[i] += 1;
            }
            if (!std::isnan(curve.causality[i])) {
                caus_sum[i] += curve.causality[i];
                caus_n[i] += 1;
            }
        }
    };

    const int L = ctx.backend->layer_count();
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        for (const auto& job : eligible_relations(dom)) {
            for (auto seed : ctx.cfg.seeds) {
                score_opt.seed = seed;
                if (req.axis == "rank") {
                    const auto tr = train_relation(ctx, dom, job, seed);
                    std::vector<int> grid = req.grid;
                    const int full = static_cast<int>(tr.map.S.size());
                    if (grid.empty()) {
                        for (int k : {2, 4, 8, 12, 16, 20, 24, 32, 48, 64, 96, 128, 192, 256})
                            if (k < full) grid.push_back(k);
                        grid.push_back(full);
                    }
                    accumulate(sweep_rank(tr.map, grid, tr.eval_set, ctx.backend.get(), score_opt));
                } else {
                    const LayerAxis axis =
                        req.axis == "subject" ? LayerAxis::Subject : LayerAxis::Object;
                    const int fixed = axis == LayerAxis::Subject ? ctx.cfg.resolved_object_layer()
                                                                 : ctx.cfg.resolved_subject_layer();
                    std::vector<int> grid = req.grid;
                    if (grid.empty()) {
                        const int lo_bound = axis == LayerAxis::Subject ? fixed : L;
                        const int start = axis == LayerAxis::Subject ? 0 : fixed;
                        for (int l = start; l <= lo_bound; l += req.full_grid ? 1 : 2) grid.push_back(l);
                    }
                    auto evaluate = [&](int ls, int lo) {
                        RunConfig cfg2 = ctx.cfg;
                        cfg2.subject_layer = ls;
                        cfg2.object_layer = lo;
                        const auto tr2 = train_relation(cfg2, *ctx.backend, dom, job, seed);
                        return score_dictionary(tr2.test_concepts, tr2.eval_set, ctx.backend.get(),
                                                score_opt);
                    };
                    accumulate(sweep_layers(axis, grid, fixed, evaluate));
                }
            }
        }
    }
    require(!grid_values.empty(), ErrorKind::InsufficientData, "sweep produced no curves");

    SweepCurve mean_curve;
    mean_curve.parameter = parameter;
    mean_curve.grid = grid_values;
    for (std::size_t i = 0; i < grid_values.size(); ++i) {
        mean_curve.accuracy.push_back(acc_n[i] ? acc_sum[i] / acc_n[i]
                                               : std::numeric_limits<double>::quiet_NaN());
        mean_curve.causality.push_back(caus_n[i] ? caus_sum[i] / caus_n[i]
                                                 : std::numeric_limits<double>::quiet_NaN());
    }
    mean_curve.finalize();
    write_artifact(manifest, ctx.out / "sweep" / (parameter + "_curve.csv"), sweep_csv(mean_curve));
    write_artifact(manifest, ctx.out / "sweep" / (parameter + "_curve.json"),
                   sweep_plot_json(mean_curve));
    manifest.set_stage("sweep", "done");
    manifest.save();
    return 0;
}

inline int cmd_transfer(PipelineContext& ctx) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("transfer", "running");
    ScoreOptions score_opt;
    score_opt.beta = ctx.cfg.beta;
    score_opt.seed = ctx.cfg.seeds.front();
    score_opt.max_causality_cases = ctx.cfg.max_causality_cases;
    score_opt.with_causality = ctx.backend->capabilities().steering;

    std::vector<TransferDomain> tds;
    int rank = ctx.cfg.resolved_rank();
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        TransferDomain td;
        td.name = dom.tree.domain;
        td.backend = ctx.backend.get();
        for (const auto& job : eligible_relations(dom)) {
            const auto tr = train_relation(ctx, dom, job, ctx.cfg.seeds.front());
            const auto depths = std::make_pair(job.relation.child_depth, job.relation.parent_depth);
            if (rank <= 0) rank = static_cast<int>(tr.map.S.size());
            td.maps.emplace(depths, tr.map);
            td.eval_sets.emplace(depths, tr.eval_set);
        }
        tds.push_back(std::move(td));
    }
    const TransferMatrix tm = transfer_matrix(tds, rank, score_opt);
    write_artifact(manifest, ctx.out / "transfer" / "accuracy.csv",
                   matrix_csv(tm.domains, tm.domains, tm.accuracy));
    write_artifact(manifest, ctx.out / "transfer" / "causality.csv",
                   matrix_csv(tm.domains, tm.domains, tm.causality));
    write_artifact(manifest, ctx.out / "transfer" / "transfer.json", transfer_plot_json(tm));
    manifest.set_stage("transfer", "done");
    manifest.save();
    return 0;
}

inline int cmd_overlap(PipelineContext& ctx) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("overlap", "running");
    struct Entry {
        std::string name;
        LinearRelationalMap map;
    };
    std::vector<Entry> maps;
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        for (const auto& job : eligible_relations(dom)) {
            const auto tr = train_relation(ctx, dom, job, ctx.cfg.seeds.front());
            maps.push_back({job.relation.key(), tr.map});
        }
    }
    require(maps.size() >= 2, ErrorKind::InsufficientData, "need at least two maps to compare");
    int rank = ctx.cfg.resolved_rank();
    for (const auto& e : maps) {
        const int full = static_cast<int>(e.map.S.size());
        rank = rank <= 0 ? full : std::min(rank, full);
    }
    std::vector<SubspaceOverlap> overlaps;
    for (std::size_t i = 0; i < maps.size(); ++i)
        for (std::size_t j = i; j < maps.size(); ++j)
            overlaps.push_back(subspace_overlap(maps[i].map, maps[j].map, rank));
    write_artifact(manifest, ctx.out / "overlap" / "overlap.csv", overlap_csv(overlaps));
    manifest.set_stage("overlap", "done");
    manifest.save();
    return 0;
}

inline int cmd_pca(PipelineContext& ctx) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("pca", "running");
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        std::vector<Vector> points;
        std::vector<std::string> labels, groups;
        for (const auto& job : eligible_relations(dom)) {
            const auto tr = train_relation(ctx, dom, job, ctx.cfg.seeds.front());
            for (const auto& [parent, cv] : tr.all_concepts) {
                points.push_back(cv.v);
                labels.push_back(dom.tree.node(parent).label);
                groups.push_back(dom.tree.node(parent).depth >= 1
                                     ? dom.tree.node(dom.tree.depth1_ancestor(parent)).label
                                     : dom.tree.node(parent).label);
            }
        }
        if (points.size() < 3) {
            std::cerr << "[lhe] domain " << dom.tree.domain << " has too few concept vectors for PCA\n";
            continue;
        }
        const auto pca = pca_project(points, 2);
        write_artifact(manifest, ctx.out / "pca" / (dom.tree.domain + "_coords.csv"),
                       pca_csv(labels, groups, pca));
        nlohmann::json evr{{"explained_variance_ratio", pca.explained_variance_ratio}};
        write_artifact(manifest, ctx.out / "pca" / (dom.tree.domain + "_variance.json"),
                       evr.dump(2) + "\n");
    }
    manifest.set_stage("pca", "done");
    manifest.save();
    return 0;
}

inline int cmd_tda(PipelineContext& ctx, bool log1p_display = false) {
    RunManifest manifest(ctx.out, ctx.cfg);
    manifest.set_stage("tda", "running");
    std::vector<PointCloud> clouds;
    std::vector<std::size_t> domain_sizes;
    for (const auto& dom : ctx.domains) {
        manifest.record_input(dom.dataset.path);
        PointCloud cloud;
        cloud.source = dom.tree.domain;
        for (const auto& job : eligible_relations(dom)) {
            const auto tr = train_relation(ctx, dom, job, ctx.cfg.seeds.front());
            for (const auto& [parent, cv] : tr.all_concepts) cloud.points.push_back(cv.v);
        }
        require(cloud.points.size() >= 2, ErrorKind::InsufficientData,
                "domain " + dom.tree.domain + " yields fewer than two concept vectors");
        domain_sizes.push_back(cloud.points.size());
        clouds.push_back(std::move(cloud));
    }
    const std::size_t n_baseline = median_cloud_size(domain_sizes);
    const int width = ctx.backend->hidden_width();
    for (const auto& bc : ctx.cfg.tda_baselines) {
        if (bc.kind == "gaussian") {
            PointCloud cloud;
            cloud.source = bc.name;
            Rng rng(fnv1a(bc.name, 0x6c62272e07bb0142ULL));
            for (std::size_t i = 0; i < n_baseline; ++i) {
                Vector v(width);
                for (int k = 0; k < width; ++k) v(k) = rng.normal();
                cloud.points.push_back(v / v.norm());
            }
            clouds.push_back(std::move(cloud));
        } else if (bc.kind == "nouns") {
            std::vector<std::string> nouns;
            for (const auto& line : split_whitespace(read_text(bc.nouns_path))) nouns.push_back(line);
            clouds.push_back(sample_baseline_cloud(nouns, *ctx.backend, n_baseline,
                                                   ctx.cfg.resolved_subject_layer(),
                                                   ctx.cfg.seeds.front(), bc.name));
        } else {
            fail(ErrorKind::InvalidArgument, "unknown baseline kind '" + bc.kind + "'");
        }
    }
    const auto sm = [&] {
        auto m = similarity_matrix(clouds);
        m.log1p_display = log1p_display;
        return m;
    }();
    write_artifact(manifest, ctx.out / "tda" / "similarity.csv", similarity_csv(sm));
    for (const auto& cloud : clouds)
        write_artifact(manifest, ctx.out / "tda" / (cloud.source + "_diagram.csv"),
                       diagram_csv(rips_persistence(cloud)));
    manifest.set_stage("tda", "done");
    manifest.save();
    return 0;
}

}  // namespace lhe
