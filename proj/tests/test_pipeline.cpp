// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "lhe/pipeline.hpp"
#include "support.hpp"

using namespace lhe;
using namespace lhe_test;

namespace {

std::filesystem::path data_dir() {
    // tests run from arbitrary build directories; walk up to the repo root
    auto p = std::filesystem::current_path();
    for (int depth = 0; depth < 6; ++depth) {
        if (std::filesystem::exists(p / "data" / "locations_demo.json")) return p / "data";
        p = p.parent_path();
    }
    lhe::fail(lhe::ErrorKind::MissingArtifact, "demo data directory not found above the working directory");
}

RunConfig demo_config(const std::filesystem::path& out) {
    RunConfig cfg;
    cfg.model = "toy";
    cfg.backend.kind = "toy";
    cfg.backend.toy_width = 48;
    cfg.backend.toy_layers = 5;
    cfg.backend.toy_seed = 11;
    cfg.backend.toy_child_sigma = 0.1;
    cfg.subject_layer = 1;
    cfg.object_layer = 4;
    cfg.rank = 0;
    cfg.seeds = {0, 1};
    cfg.fewshot = 2;
    cfg.datasets = {{"locations", (data_dir() / "locations_demo.json").string(), {"loc_d1_0", "loc_d1_3"}},
                    {"organisms", (data_dir() / "organisms_demo.json").string(), {"org_d1_0", "org_d1_1"}}};
    cfg.out_dir = out.string();
    return cfg;
}

std::filesystem::path fresh_out(const std::string& tag) {
    const auto out = std::filesystem::temp_directory_path() / ("lhe_pipe_" + tag);
    std::filesystem::remove_all(out);
    return out;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config validation fails fast") {
    RunConfig cfg = demo_config(fresh_out("cfgcheck"));
    SUBCASE("no seeds") {
        cfg.seeds.clear();
        CHECK_THROWS_AS(validate_config(cfg), Error);
    }
    SUBCASE("no datasets") {
        cfg.datasets.clear();
        CHECK_THROWS_AS(validate_config(cfg), Error);
    }
    SUBCASE("remote without url") {
        cfg.backend.kind = "remote";
        CHECK_THROWS_AS(validate_config(cfg), Error);
    }
    SUBCASE("layers beyond the backend") {
        cfg.object_layer = 99;
        CHECK_THROWS_AS(make_context(cfg), Error);
    }
}

TEST_CASE("config files round-trip through JSON") {
    const auto cfg = demo_config(fresh_out("cfgjson"));
    const auto doc = config_to_json(cfg);
    const auto back = config_from_json(doc);
    CHECK(back.model == cfg.model);
    CHECK(back.backend.toy_width == cfg.backend.toy_width);
    CHECK(back.datasets.size() == cfg.datasets.size());
    CHECK(back.datasets[0].train_roots == cfg.datasets[0].train_roots);
    CHECK(back.seeds == cfg.seeds);
    CHECK(back.rank == cfg.rank);
}

TEST_CASE("filter command on the faithful toy keeps everything") {
    const auto out = fresh_out("filter");
    auto ctx = make_context(demo_config(out));
    CHECK(cmd_filter(ctx) == 0);
    const auto kept = nlohmann::json::parse(read_text(out / "filter" / "locations_kept.json"));
    const auto tree = load_hierarchy(data_dir() / "locations_demo.json");
    CHECK(kept.size() == derive_triples(tree).size());
    const auto verdicts = read_text(out / "filter" / "locations_verdicts.csv");
    CHECK(verdicts.rfind("triple_id,kept,top_option,gold_option\n", 0) == 0);
    const auto summary = read_text(out / "filter" / "locations_summary.csv");
    CHECK(summary.find("depth,total,kept") == 0);
    CHECK(summary.find("1,4,4") != std::string::npos);
    CHECK(summary.find("2,12,12") != std::string::npos);
    CHECK(summary.find("3,24,24") != std::string::npos);
    std::filesystem::remove_all(out);
}

TEST_CASE("filter command on a rigged toy keeps roughly one triple per option") {
    const auto out = fresh_out("filter_rig");
    auto cfg = demo_config(out);
    cfg.backend.toy_rig_option = "A";
    cfg.option_count = 4;
    auto ctx = make_context(cfg);
    CHECK(cmd_filter(ctx) == 0);

    // expected kept set by replaying the renderer's seeded option placement
    const auto& dom = ctx.domains[0];
    std::size_t expected = 0, total = 0;
    for (const auto& [key, triples] : group_by_relation(dom.triples)) {
        const PromptSpec spec = make_prompt_spec(ctx.cfg, dom.split.train, triples.front().relation,
                                                 ctx.cfg.seeds.front(), TemplateKind::QaMultipleChoice);
        for (const auto& t : triples) {
            ++total;
            if (render_prompt(t, spec, dom.tree).gold_letter == 'A') ++expected;
        }
    }
    const auto kept = nlohmann::json::parse(read_text(out / "filter" / "locations_kept.json"));
    CHECK(kept.size() == expected);
    CHECK(double(kept.size()) / double(total) == doctest::Approx(0.25).epsilon(0.8));
    std::filesystem::remove_all(out);
}

TEST_CASE("filter_before_train prunes the splits before any training happens") {
    const auto out = fresh_out("prefilter");
    auto cfg = demo_config(out);
    cfg.datasets = {{"locations", (data_dir() / "locations_demo.json").string(), {"loc_d1_0", "loc_d1_3"}}};
    cfg.filter_before_train = true;

    SUBCASE("a faithful toy keeps every triple") {
        auto plain_cfg = cfg;
        plain_cfg.filter_before_train = false;
        auto plain = make_context(plain_cfg);
        auto filtered = make_context(cfg);
        CHECK(filtered.domains[0].split.train.size() == plain.domains[0].split.train.size());
        CHECK(filtered.domains[0].split.test.size() == plain.domains[0].split.test.size());
    }
    SUBCASE("a rigged toy shrinks the splits to the replayed kept set") {
        cfg.backend.toy_rig_option = "A";
        auto ctx = make_context(cfg);
        auto plain_cfg = cfg;
        plain_cfg.filter_before_train = false;
        auto plain = make_context(plain_cfg);
        std::size_t expected_train = 0, expected_test = 0;
        for (const auto& [key, triples] : group_by_relation(plain.domains[0].triples)) {
            const PromptSpec spec =
                make_prompt_spec(plain_cfg, plain.domains[0].split.train, triples.front().relation,
                                 plain_cfg.seeds.front(), TemplateKind::QaMultipleChoice);
            const auto result = filter_by_qa(triples, *plain.backend, spec, plain.domains[0].tree);
            std::set<std::string> train_ids;
            for (const auto& t : plain.domains[0].split.train) train_ids.insert(t.id());
            for (const auto& t : result.kept)
                (train_ids.count(t.id()) ? expected_train : expected_test) += 1;
        }
        CHECK(ctx.domains[0].split.train.size() == expected_train);
        CHECK(ctx.domains[0].split.test.size() == expected_test);
        CHECK(expected_train + expected_test < plain.domains[0].triples.size());
    }
    SUBCASE("dump backends cannot pre-filter") {
        auto plain_cfg = cfg;
        plain_cfg.filter_before_train = false;
        auto plain = make_context(plain_cfg);
        cmd_extract(plain);
        RunConfig dump_cfg = cfg;
        dump_cfg.backend.kind = "dump";
        dump_cfg.backend.dump_dir = (out / "dumps" / "locations").string();
        try {
            make_context(dump_cfg);
            FAIL("expected capability error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::CapabilityMissing);
        }
    }
    std::filesystem::remove_all(out);
}

TEST_CASE("dump backends cannot drive the filter") {
    const auto out = fresh_out("filter_dump");
    auto cfg = demo_config(out);
    auto ctx = make_context(cfg);
    CHECK(cmd_extract(ctx) == 0);

    RunConfig dump_cfg = cfg;
    dump_cfg.backend.kind = "dump";
    dump_cfg.backend.dump_dir = (out / "dumps" / "locations").string();
    dump_cfg.datasets = {cfg.datasets[0]};
    auto dump_ctx = make_context(dump_cfg);
    CHECK_FALSE(dump_ctx.backend->capabilities().scoring);
    try {
        cmd_filter(dump_ctx);
        FAIL("expected capability error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::CapabilityMissing);
    }
    std::filesystem::remove_all(out);
}

TEST_CASE("train persists one artifact per (domain, relation, seed); reruns are bit-identical") {
    const auto out = fresh_out("train");
    auto cfg = demo_config(out);
    cfg.seeds = {0, 1};
    {
        auto ctx = make_context(cfg);
        CHECK(cmd_train(ctx) == 0);
    }
    const std::vector<std::string> expected_dirs{
        "maps/locations/part-of_2-1/seed0", "maps/locations/part-of_2-1/seed1",
        "maps/locations/part-of_3-2/seed0", "maps/locations/part-of_3-2/seed1",
        "maps/organisms/is-a_2-1/seed0",    "maps/organisms/is-a_2-1/seed1"};
    for (const auto& dir : expected_dirs) CHECK(std::filesystem::exists(out / dir / "manifest.json"));

    const auto w_bytes = read_text(out / "maps/locations/part-of_3-2/seed0/W.f32");
    {
        auto ctx = make_context(cfg);
        CHECK(cmd_train(ctx) == 0);
    }
    CHECK(read_text(out / "maps/locations/part-of_3-2/seed0/W.f32") == w_bytes);

    SUBCASE("artifacts reload through the trained-map reader") {
        const auto loaded = load_map(out / "maps/locations/part-of_3-2/seed0");
        CHECK(loaded.map.relation.child_depth == 3);
        CHECK(loaded.map.meta.model == "toy");
        CHECK(loaded.concepts.size() == 12);  // every country has a concept vector
    }
    std::filesystem::remove_all(out);
}

TEST_CASE("on the zero-noise toy, different seeds change only selection metadata") {
    const auto out = fresh_out("train_seeds");
    auto cfg = demo_config(out);
    cfg.backend.toy_child_sigma = 0.0;
    cfg.seeds = {0, 1};
    cfg.datasets = {{"locations", (data_dir() / "locations_demo.json").string(), {"loc_d1_0", "loc_d1_3"}}};
    auto ctx = make_context(cfg);
    CHECK(cmd_train(ctx) == 0);
    const auto a = load_map(out / "maps/locations/part-of_3-2/seed0");
    const auto b = load_map(out / "maps/locations/part-of_3-2/seed1");
    CHECK(a.map.meta.seed == 0);
    CHECK(b.map.meta.seed == 1);
    CHECK((a.map.W - b.map.W).norm() <= 1e-8);
    CHECK((a.map.b - b.map.b).norm() <= 1e-8);
    std::filesystem::remove_all(out);
}

TEST_CASE("eval from an activation dump matches capability limits") {
    const auto out = fresh_out("eval_dump");
    auto cfg = demo_config(out);
    cfg.datasets = {{"locations", (data_dir() / "locations_demo.json").string(), {"loc_d1_0", "loc_d1_3"}}};
    {
        auto ctx = make_context(cfg);
        CHECK(cmd_extract(ctx) == 0);
    }
    RunConfig dump_cfg = cfg;
    dump_cfg.backend.kind = "dump";
    dump_cfg.backend.dump_dir = (out / "dumps" / "locations").string();
    auto ctx = make_context(dump_cfg);
    CHECK(cmd_eval(ctx) == 0);
    const auto csv = read_text(out / "eval" / "report.csv");
    CHECK(csv.find(",accuracy,") != std::string::npos);
    CHECK(csv.find(",causality,") == std::string::npos);  // dumps cannot steer
    std::filesystem::remove_all(out);
}

TEST_CASE("eval emits per-seed CSV rows and a markdown summary; reruns are byte-identical") {
    const auto out_a = fresh_out("eval_a");
    const auto out_b = fresh_out("eval_b");
    {
        auto ctx = make_context(demo_config(out_a));
        CHECK(cmd_eval(ctx) == 0);
    }
    {
        auto ctx = make_context(demo_config(out_b));
        CHECK(cmd_eval(ctx) == 0);
    }
    const auto csv_a = read_text(out_a / "eval" / "report.csv");
    const auto csv_b = read_text(out_b / "eval" / "report.csv");
    CHECK(csv_a == csv_b);
    CHECK(csv_a.rfind("relation,domain,method,metric,value,seed\n", 0) == 0);
    for (const char* needle :
         {"locations,lhe,accuracy", "locations,input-averaging,accuracy", "locations,max-margin,accuracy",
          "ALL,locations,lhe,causality", "chance_corrected_accuracy", ",0\n", ",1\n"})
        CHECK(csv_a.find(needle) != std::string::npos);
    const auto md = read_text(out_a / "eval" / "report.md");
    CHECK(md.find("| Method |") == 0);
    CHECK(md.find("lhe") != std::string::npos);

    SUBCASE("a different seed list changes the report") {
        const auto out_c = fresh_out("eval_c");
        auto cfg = demo_config(out_c);
        cfg.seeds = {7};
        auto ctx = make_context(cfg);
        CHECK(cmd_eval(ctx) == 0);
        CHECK(read_text(out_c / "eval" / "report.csv") != csv_a);
        std::filesystem::remove_all(out_c);
    }
    std::filesystem::remove_all(out_a);
    std::filesystem::remove_all(out_b);
}

TEST_CASE("rank sweep writes one row per grid value plus plot data") {
    const auto out = fresh_out("sweep");
    auto cfg = demo_config(out);
    cfg.seeds = {0};
    auto ctx = make_context(cfg);
    SweepRequest req;
    req.axis = "rank";
    req.grid = {4, 8, 16, 32};
    CHECK(cmd_sweep(ctx, req) == 0);
    const auto csv = read_text(out / "sweep" / "rank_curve.csv");
    CHECK(csv.rfind("rank,accuracy,causality\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 grid rows
    const auto plot = nlohmann::json::parse(read_text(out / "sweep" / "rank_curve.json"));
    CHECK(plot.at("x").size() == 4);
    CHECK(plot.at("series").at("accuracy").size() == 4);
    CHECK(plot.at("series").at("causality").size() == 4);
    std::filesystem::remove_all(out);
}

TEST_CASE("subject-layer sweep runs one estimate+eval cycle per layer") {
    const auto out = fresh_out("lsweep");
    auto cfg = demo_config(out);
    cfg.seeds = {0};
    cfg.datasets = {{"locations", (data_dir() / "locations_demo.json").string(), {"loc_d1_0", "loc_d1_3"}}};
    auto ctx = make_context(cfg);
    SweepRequest req;
    req.axis = "subject";
    CHECK(cmd_sweep(ctx, req) == 0);
    const auto csv = read_text(out / "sweep" / "subject_layer_curve.csv");
    CHECK(csv.rfind("subject_layer,accuracy,causality\n", 0) == 0);
    // default grid: every other layer from 0 up to the fixed object layer (4)
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + layers 0, 2, 4
    const auto plot = nlohmann::json::parse(read_text(out / "sweep" / "subject_layer_curve.json"));
    CHECK(plot.at("x") == nlohmann::json({0.0, 2.0, 4.0}));
    std::filesystem::remove_all(out);
}

TEST_CASE("transfer matrix has an exact in-domain diagonal and full grids") {
    const auto out = fresh_out("transfer");
    auto cfg = demo_config(out);
    auto ctx = make_context(cfg);
    CHECK(cmd_transfer(ctx) == 0);
    const auto plot = nlohmann::json::parse(read_text(out / "transfer" / "transfer.json"));
    CHECK(plot.at("domains").size() == 2);
    const auto acc = plot.at("accuracy");
    REQUIRE(acc.size() == 2);
    REQUIRE(acc[0].size() == 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(acc[i][j].is_number());

    // diagonal equals an independent in-domain evaluation
    const auto& dom = ctx.domains[0];
    const auto jobs = eligible_relations(dom);
    ScoreOptions so;
    so.seed = ctx.cfg.seeds.front();
    so.with_causality = true;
    double acc_sum = 0;
    int n = 0;
    for (const auto& job : jobs) {
        const auto tr = train_relation(ctx, dom, job, so.seed);
        const auto o = score_dictionary(tr.test_concepts, tr.eval_set, ctx.backend.get(), so);
        acc_sum += o.accuracy;
        ++n;
    }
    CHECK(acc[0][0].get<double>() == doctest::Approx(acc_sum / n).epsilon(1e-12));
    std::filesystem::remove_all(out);
}

TEST_CASE("overlap, pca, and tda commands emit their reports") {
    const auto out = fresh_out("analysis");
    auto cfg = demo_config(out);
    cfg.seeds = {0};
    cfg.tda_baselines = {{"gaussian", "gaussian", ""},
                         {"nouns", "nouns", (data_dir() / "nouns.txt").string()}};
    auto ctx = make_context(cfg);

    CHECK(cmd_overlap(ctx) == 0);
    const auto overlap = read_text(out / "overlap" / "overlap.csv");
    CHECK(overlap.rfind("a,b,rank,overlap\n", 0) == 0);
    // self pairs sit at 1
    CHECK(overlap.find("locations/part-of/2-1,locations/part-of/2-1") != std::string::npos);

    CHECK(cmd_pca(ctx) == 0);
    const auto coords = read_text(out / "pca" / "locations_coords.csv");
    CHECK(coords.rfind("label,group,pc1,pc2\n", 0) == 0);
    const auto variance = nlohmann::json::parse(read_text(out / "pca" / "locations_variance.json"));
    CHECK(variance.at("explained_variance_ratio").size() == 2);

    CHECK(cmd_tda(ctx, true) == 0);
    const auto sim = read_text(out / "tda" / "similarity.csv");
    CHECK(sim.rfind("# transform: log1p\n", 0) == 0);
    CHECK(sim.find("locations") != std::string::npos);
    CHECK(sim.find("gaussian") != std::string::npos);
    CHECK(std::filesystem::exists(out / "tda" / "locations_diagram.csv"));
    CHECK(std::filesystem::exists(out / "tda" / "nouns_diagram.csv"));

    // run manifest lists artifacts with hashes and stage statuses
    const auto manifest = nlohmann::json::parse(read_text(out / "run_manifest.json"));
    CHECK(manifest.at("stages").contains("tda"));
    CHECK(manifest.at("stages").at("tda").at("status") == "done");
    bool found = false;
    for (const auto& [path, hash] : manifest.at("artifacts").items()) {
        if (path.find("similarity.csv") != std::string::npos) {
            found = true;
            CHECK(hash.get<std::string>().size() == 64);
        }
    }
    CHECK(found);
    std::filesystem::remove_all(out);
}

TEST_CASE("tda with exactly two sources yields a symmetric 2x2 zero-diagonal matrix") {
    const auto out = fresh_out("tda2");
    auto cfg = demo_config(out);
    cfg.seeds = {0};
    cfg.tda_baselines.clear();
    auto ctx = make_context(cfg);
    CHECK(cmd_tda(ctx) == 0);
    const auto sim = read_text(out / "tda" / "similarity.csv");
    // parse the tiny CSV by hand
    std::vector<std::vector<std::string>> rows;
    std::string line;
    for (std::size_t start = 0; start <= sim.size();) {
        const auto eol = sim.find('\n', start);
        if (eol == std::string::npos) break;
        line = sim.substr(start, eol - start);
        start = eol + 1;
        std::vector<std::string> cells;
        std::size_t c = 0;
        while (true) {
            const auto comma = line.find(',', c);
            cells.push_back(line.substr(c, comma == std::string::npos ? std::string::npos : comma - c));
            if (comma == std::string::npos) break;
            c = comma + 1;
        }
        rows.push_back(cells);
    }
    REQUIRE(rows.size() == 3);
    CHECK(rows[1][1] == "0");
    CHECK(rows[2][2] == "0");
    CHECK(rows[1][2] == rows[2][1]);
    std::filesystem::remove_all(out);
}

}  // TEST_SUITE
