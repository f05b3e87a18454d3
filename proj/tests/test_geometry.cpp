// Copyright 2026 the lhe authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/QR>

#include "lhe/geometry.hpp"
#include "lhe/toy_backend.hpp"
#include "support.hpp"

using namespace lhe;
using namespace lhe_test;

namespace {

Matrix random_orthonormal(int rows, int cols, Rng& rng) {
    Matrix g(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    return q;
}

LinearRelationalMap map_from_matrix(const Matrix& w, const std::string& domain) {
    LinearRelationalMap map;
    map.relation = RelationId{domain, RelationKind::IsA, 2, 1};
    map.W = w;
    map.b = Vector::Zero(w.rows());
    compute_svd(map);
    map.rank_k = static_cast<int>(map.S.size());
    return map;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("subspace overlap identities") {
    Rng rng(31);
    const Matrix v = random_orthonormal(32, 6, rng);
    CHECK(subspace_overlap_from_bases(v, v) == doctest::Approx(1.0).epsilon(1e-6));

    SUBCASE("orthogonal coordinate blocks overlap at zero") {
        Matrix a = Matrix::Zero(10, 3), b = Matrix::Zero(10, 3);
        for (int i = 0; i < 3; ++i) {
            a(i, i) = 1.0;
            b(5 + i, i) = 1.0;
        }
        CHECK(subspace_overlap_from_bases(a, b) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("overlap is symmetric and rotation-invariant") {
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix a = random_orthonormal(24, 5, rng);
            const Matrix b = random_orthonormal(24, 5, rng);
            const double ab = subspace_overlap_from_bases(a, b);
            const double ba = subspace_overlap_from_bases(b, a);
            CHECK(ab == doctest::Approx(ba).epsilon(1e-6));
            // re-basis within the same subspace
            const Matrix rot = random_orthonormal(5, 5, rng);
            CHECK(subspace_overlap_from_bases(a * rot, b) == doctest::Approx(ab).epsilon(1e-9));
        }
    }
    SUBCASE("independent random subspaces concentrate near r/d") {
        const int d = 256, r = 16;
        double total = 0;
        for (int trial = 0; trial < 200; ++trial) {
            const Matrix a = random_orthonormal(d, r, rng);
            const Matrix b = random_orthonormal(d, r, rng);
            total += subspace_overlap_from_bases(a, b);
        }
        CHECK(std::abs(total / 200.0 - double(r) / double(d)) <= 0.02);
    }
}

TEST_CASE("subspace overlap through maps respects numerical rank") {
    Rng rng(7);
    Matrix w(12, 12);
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c) w(r, c) = rng.normal();
    const auto a = map_from_matrix(w, "a");
    const auto o = subspace_overlap(a, a, 5);
    CHECK(o.value == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(o.rank == 5);

    auto degenerate = map_from_matrix(Matrix::Identity(12, 12), "b");
    for (Eigen::Index i = 8; i < 12; ++i) degenerate.S(i) = 1e-15;  // numerically dead tail
    try {
        subspace_overlap(a, degenerate, 10);
        FAIL("expected degenerate-rank error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateRank);
    }
}

TEST_CASE("pca_project") {
    SUBCASE("collinear points put all variance on the first axis") {
        std::vector<Vector> pts;
        Vector dir(3);
        dir << 1, 2, 2;
        for (int i = 0; i < 6; ++i) pts.push_back(Vector(double(i) * dir));
        const auto pca = pca_project(pts, 2);
        CHECK(pca.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(pca.explained_variance_ratio[1] == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("a symmetric pair projects to +/- its norm") {
        Vector u(4);
        u << 1, 1, 1, 1;
        const auto pca = pca_project({u, Vector(-u)}, 1);
        CHECK(std::abs(pca.coordinates(0, 0)) == doctest::Approx(u.norm()).epsilon(1e-9));
        CHECK(pca.coordinates(0, 0) == doctest::Approx(-pca.coordinates(1, 0)).epsilon(1e-9));
    }
    SUBCASE("sign convention makes projections reproducible") {
        Rng rng(11);
        std::vector<Vector> pts;
        for (int i = 0; i < 12; ++i) {
            Vector v(5);
            for (int k = 0; k < 5; ++k) v(k) = rng.normal();
            pts.push_back(v);
        }
        const auto a = pca_project(pts, 3);
        const auto b = pca_project(pts, 3);
        CHECK((a.coordinates - b.coordinates).norm() == 0.0);
        for (Eigen::Index c = 0; c < a.components.cols(); ++c) {
            Eigen::Index arg = 0;
            a.components.col(c).cwiseAbs().maxCoeff(&arg);
            CHECK(a.components(arg, c) > 0.0);
        }
    }
    SUBCASE("full-rank projection preserves centered inner products") {
        Rng rng(17);
        std::vector<Vector> pts;
        for (int i = 0; i < 9; ++i) {
            Vector v(4);
            for (int k = 0; k < 4; ++k) v(k) = rng.normal();
            pts.push_back(v);
        }
        const auto pca = pca_project(pts, 4);
        Vector mean = Vector::Zero(4);
        for (const auto& p : pts) mean += p;
        mean /= 9.0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = 0; j < pts.size(); ++j) {
                const double direct = (pts[i] - mean).dot(pts[j] - mean);
                const double projected = pca.coordinates.row(static_cast<Eigen::Index>(i))
                                             .dot(pca.coordinates.row(static_cast<Eigen::Index>(j)));
                CHECK(direct == doctest::Approx(projected).epsilon(1e-6).scale(1.0));
            }
    }
    SUBCASE("fewer points than components is rejected") {
        try {
            pca_project({Vector::Zero(3), Vector::Ones(3)}, 2);
            FAIL("expected insufficient-data error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::InsufficientData);
        }
    }
    SUBCASE("two planted subtrees separate with positive silhouette") {
        const auto tree = flat_tree("pca", 2, 12);
        ToyConfig cfg;
        cfg.width = 24;
        cfg.layers = 2;
        cfg.seed = 23;
        ToyModel toy(cfg);
        TreePlanting planting;
        planting.seed = 3;
        planting.child_sigma = 0.25;
        toy.add_tree(tree, planting);
        std::vector<Vector> pts;
        std::vector<std::string> labels;
        for (const auto& t : derive_triples(tree)) {
            if (t.relation.child_depth != 2) continue;
            pts.push_back(toy.node_vector(t.subject_id));
            labels.push_back(t.object_id);
        }
        const auto pca = pca_project(pts, 2);
        CHECK(silhouette(pca.coordinates, labels) > 0.0);
    }
}

TEST_CASE("sweep curves mark the argmax of the accuracy/causality mean") {
    SweepCurve curve;
    curve.parameter = "rank";
    curve.grid = {2, 4, 8};
    curve.accuracy = {0.2, 0.9, 0.8};
    curve.causality = {0.1, 0.9, 0.7};
    curve.finalize();
    CHECK(curve.argmax_value == 4.0);  // (0.9+0.9)/2 beats (0.8+0.7)/2

    SUBCASE("grids must strictly increase") {
        try {
            check_grid_strictly_increasing({2, 2, 4});
            FAIL("expected invalid-argument error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::InvalidArgument);
        }
    }
}

TEST_CASE("layer sweep peaks where the signal is injected") {
    const auto tree = flat_tree("lsw", 4, 6);
    ToyConfig cfg;
    cfg.width = 48;
    cfg.layers = 6;
    cfg.seed = 31;
    cfg.signal_layer = 3;
    cfg.post_signal_noise = 0.6;
    ToyModel toy(cfg);
    TreePlanting planting;
    planting.seed = 12;
    planting.child_sigma = 0.1;
    toy.add_tree(tree, planting);

    const auto split = split_by_root(tree, {"lswp0", "lswp1"});
    RelationId rel;
    std::vector<Triple> train, test;
    for (const auto& t : split.train)
        if (t.relation.child_depth == 2) {
            train.push_back(t);
            rel = t.relation;
        }
    for (const auto& t : split.test)
        if (t.relation.child_depth == 2) test.push_back(t);

    const int lo = 6;
    auto evaluate = [&](int ls, int lo2) {
        CollectOptions opt;
        opt.subject_layer = ls;
        opt.object_layer = lo2;
        opt.with_jacobian = true;
        opt.prompt_spec.fewshot_count = 0;
        std::vector<SubjectObjectSample> train_samples;
        for (const auto& cs : collect_samples(toy, tree, train, opt)) train_samples.push_back(cs.sample);
        const auto map = estimate_map(train_samples, rel, MapMetadata{ls, lo2, 8, 0, "toy"}, 8);
        opt.with_jacobian = false;
        const auto collected = collect_samples(toy, tree, test, opt);
        const auto set = build_eval_set(collected, tree, rel);
        const auto entries = lhe_concepts(map, static_cast<int>(map.S.size()), set);
        ScoreOptions so;
        so.with_causality = false;
        return score_dictionary(entries, set, nullptr, so);
    };
    const auto curve = sweep_layers(LayerAxis::Subject, {0, 1, 2, 3, 4, 5}, lo, evaluate);
    CHECK(curve.argmax_value == 3.0);
    // layers before the injection decode at chance over two test parents
    CHECK(curve.accuracy[0] <= 0.75);
    CHECK(curve.accuracy[3] == doctest::Approx(1.0));
}

TEST_CASE("identical layers recover the identity map") {
    const auto tree = flat_tree("idm", 3, 5);
    ToyConfig cfg;
    cfg.width = 24;
    cfg.layers = 3;
    cfg.seed = 19;
    ToyModel toy(cfg);
    TreePlanting planting;
    planting.seed = 5;
    planting.child_sigma = 0.2;
    toy.add_tree(tree, planting);
    CollectOptions opt;
    opt.subject_layer = 2;
    opt.object_layer = 2;
    opt.with_jacobian = true;
    opt.prompt_spec.fewshot_count = 0;
    std::vector<Triple> train;
    RelationId rel;
    for (const auto& t : derive_triples(tree))
        if (t.relation.child_depth == 2) {
            train.push_back(t);
            rel = t.relation;
        }
    std::vector<SubjectObjectSample> samples;
    for (const auto& cs : collect_samples(toy, tree, train, opt)) samples.push_back(cs.sample);
    const auto map = estimate_map(samples, rel, MapMetadata{2, 2, 8, 0, "toy"}, 8);
    CHECK((map.W - Matrix::Identity(24, 24)).norm() <= 1e-10);
}

TEST_CASE("transfer matrix: shared map transfers, diagonal equals in-domain scores") {
    // two domains planted on one model share the layer maps exactly
    const auto tree_a = flat_tree("tma", 4, 6);
    const auto tree_b = flat_tree("tmb", 4, 6);
    ToyConfig cfg;
    cfg.width = 48;
    cfg.layers = 3;
    cfg.seed = 57;
    ToyModel toy(cfg);
    TreePlanting pa;
    pa.seed = 100;
    pa.child_sigma = 0.05;
    TreePlanting pb;
    pb.seed = 200;
    pb.child_sigma = 0.05;
    toy.add_tree(tree_a, pa);
    toy.add_tree(tree_b, pb);

    auto build = [&](const HierarchyTree& tree, const std::set<std::string>& roots) {
        TransferDomain td;
        td.name = tree.domain;
        td.backend = &toy;
        const auto split = split_by_root(tree, roots);
        RelationId rel;
        std::vector<Triple> train, test;
        for (const auto& t : split.train)
            if (t.relation.child_depth == 2) {
                train.push_back(t);
                rel = t.relation;
            }
        for (const auto& t : split.test)
            if (t.relation.child_depth == 2) test.push_back(t);
        CollectOptions opt;
        opt.subject_layer = 1;
        opt.object_layer = 3;
        opt.with_jacobian = true;
        opt.prompt_spec.fewshot_count = 0;
        std::vector<SubjectObjectSample> samples;
        for (const auto& cs : collect_samples(toy, tree, train, opt)) samples.push_back(cs.sample);
        const auto map = estimate_map(samples, rel, MapMetadata{1, 3, 8, 0, "toy"}, 8);
        opt.with_jacobian = false;
        const auto set = build_eval_set(collect_samples(toy, tree, test, opt), tree, rel);
        td.maps.emplace(std::make_pair(2, 1), map);
        td.eval_sets.emplace(std::make_pair(2, 1), set);
        return td;
    };
    std::vector<TransferDomain> domains{build(tree_a, {"tmap0", "tmap1"}),
                                        build(tree_b, {"tmbp0", "tmbp1"})};
    ScoreOptions so;
    so.seed = 0;
    so.with_causality = true;
    const auto tm = transfer_matrix(domains, 48, so);

    // diagonal must equal independently computed in-domain scores exactly
    for (int i = 0; i < 2; ++i) {
        const auto& td = domains[static_cast<std::size_t>(i)];
        const auto entries = lhe_concepts(td.maps.at({2, 1}), 48, td.eval_sets.at({2, 1}));
        const auto o = score_dictionary(entries, td.eval_sets.at({2, 1}), &toy, so);
        CHECK(tm.accuracy(i, i) == o.accuracy);
        CHECK(tm.causality(i, i) == o.causality);
    }
    // shared layer maps: cross-domain accuracy matches in-domain closely
    CHECK(tm.accuracy(0, 1) == doctest::Approx(tm.accuracy(0, 0)).epsilon(0.15));
    CHECK(tm.accuracy(1, 0) == doctest::Approx(tm.accuracy(1, 1)).epsilon(0.15));
}

}  // TEST_SUITE
