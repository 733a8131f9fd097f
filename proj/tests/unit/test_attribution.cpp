#include "doctest.h"

#include "latentscope/attribution.hpp"
#include "latentscope/error.hpp"
#include "latentscope/phantom.hpp"
#include "latentscope/rng.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace latentscope;

namespace {

// Exhaustive interventional Shapley values: v(S) = mean over background of f(x on S, z elsewhere).
Eigen::VectorXd brute_force_shapley(const ForestModel& model, const Eigen::VectorXd& x, const Eigen::MatrixXd& bg) {
    const int m = static_cast<int>(x.size());
    const int subsets = 1 << m;
    std::vector<double> v(static_cast<std::size_t>(subsets), 0.0);
    for (int s = 0; s < subsets; ++s) {
        for (Eigen::Index b = 0; b < bg.rows(); ++b) {
            Eigen::VectorXd h = bg.row(b).transpose();
            for (int i = 0; i < m; ++i)
                if (s & (1 << i)) h(i) = x(i);
            v[static_cast<std::size_t>(s)] += model.predict(h);
        }
        v[static_cast<std::size_t>(s)] /= static_cast<double>(bg.rows());
    }
    std::vector<double> fact(static_cast<std::size_t>(m + 1), 1.0);
    for (int k = 1; k <= m; ++k) fact[static_cast<std::size_t>(k)] = fact[static_cast<std::size_t>(k - 1)] * k;
    Eigen::VectorXd phi = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i) {
        for (int s = 0; s < subsets; ++s) {
            if (s & (1 << i)) continue;
            const int size = __builtin_popcount(static_cast<unsigned>(s));
            const double w = fact[static_cast<std::size_t>(size)] * fact[static_cast<std::size_t>(m - size - 1)] /
                             fact[static_cast<std::size_t>(m)];
            phi(i) += w * (v[static_cast<std::size_t>(s | (1 << i))] - v[static_cast<std::size_t>(s)]);
        }
    }
    return phi;
}

Eigen::MatrixXd uniform_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = uniform01(rng);
    return m;
}

ForestModel single_tree(std::vector<TreeNode> nodes, std::size_t features) {
    ForestModel f;
    f.feature_count = features;
    f.trees.push_back(DecisionTree{std::move(nodes)});
    return f;
}

}  // namespace

TEST_CASE("reconstruction error examples") {
    Volume a(Dims{4, 4, 4}, 0.5f);
    CHECK(sum_squared_error(a, a) == 0.0);
    Volume b = a;
    for (std::size_t i = 0; i < 8; ++i) b[i] = 0.6f;
    CHECK(sum_squared_error(b, a) == doctest::Approx(0.08).epsilon(1e-6));
    CHECK_THROWS_AS(sum_squared_error(Volume(Dims{4, 4, 2}), a), ShapeError);
}

TEST_CASE("reconstruction error travels with subjects") {
    PhantomConfig cfg;
    cfg.dims = {8, 8, 8};
    cfg.region_count = 4;
    cfg.class_counts = {{ClassLabel::NOR, 3}, {ClassLabel::AD, 3}};
    cfg.seed = 5;
    auto cohort = generate_phantom_cohort(cfg);
    const auto params = init_params(cfg.dims, 9);
    const auto errors = total_reconstruction_error(cohort, params);
    REQUIRE(errors.size() == 6);
    for (double e : errors) CHECK(e > 0.0);
    auto reversed = cohort;
    std::reverse(reversed.subjects.begin(), reversed.subjects.end());
    const auto rev_errors = total_reconstruction_error(reversed, params);
    for (std::size_t i = 0; i < 6; ++i) CHECK(rev_errors[5 - i] == errors[i]);
}

TEST_CASE("forest fitting") {
    Rng rng(31);
    const Eigen::MatrixXd x = uniform_matrix(40, 6, rng);
    ForestConfig cfg;
    cfg.n_trees = 20;
    cfg.seed = 4;

    SUBCASE("constant targets give single-leaf trees") {
        const std::vector<double> y(40, 2.5);
        const auto f = rf_fit(x, y, cfg);
        for (const auto& t : f.trees) CHECK(t.nodes.size() == 1);
        for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(f.predict(x.row(i).transpose()) == doctest::Approx(2.5));
    }
    SUBCASE("single informative feature is fitted") {
        std::vector<double> y(40);
        for (std::size_t i = 0; i < 40; ++i) y[i] = x(static_cast<Eigen::Index>(i), 3);
        cfg.max_depth = 4;
        const auto f = rf_fit(x, y, cfg);
        const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 40.0;
        double ss_res = 0, ss_tot = 0;
        for (std::size_t i = 0; i < 40; ++i) {
            const double p = f.predict(x.row(static_cast<Eigen::Index>(i)).transpose());
            ss_res += (y[i] - p) * (y[i] - p);
            ss_tot += (y[i] - mean) * (y[i] - mean);
        }
        CHECK(1.0 - ss_res / ss_tot >= 0.9);
    }
    SUBCASE("structure invariants and determinism") {
        std::vector<double> y(40);
        for (std::size_t i = 0; i < 40; ++i) y[i] = std::sin(5 * x(static_cast<Eigen::Index>(i), 0)) + x(static_cast<Eigen::Index>(i), 1);
        const auto f = rf_fit(x, y, cfg);
        CHECK(f.trees.size() == 20);
        for (const auto& t : f.trees) {
            CHECK(t.depth() <= cfg.max_depth);
            std::vector<int> seen(t.nodes.size(), 0);
            seen[0] = 1;
            for (const auto& n : t.nodes) {
                if (n.feature < 0) continue;
                CHECK(n.feature < 6);
                ++seen[static_cast<std::size_t>(n.left)];
                ++seen[static_cast<std::size_t>(n.right)];
            }
            for (int s : seen) CHECK(s == 1);  // every node, hence every leaf, reached exactly once
        }
        CHECK(rf_fit(x, y, cfg).hash() == f.hash());
        auto other = cfg;
        other.seed = 5;
        CHECK(rf_fit(x, y, other).hash() != f.hash());
    }
    CHECK_THROWS_AS(rf_fit(x.topRows(4), std::vector<double>(4, 1.0), cfg), ConfigError);
}

TEST_CASE("single-split tree attribution") {
    const auto f = single_tree({{0, 0.5, 1, 2, 5.0}, {-1, 0, -1, -1, 0.0}, {-1, 0, -1, -1, 10.0}}, 3);
    Eigen::MatrixXd bg(2, 3);
    bg << 0.2, 0.7, 0.1, 0.8, 0.3, 0.9;
    Eigen::VectorXd x(3);
    x << 0.9, 0.1, 0.5;
    const auto e = tree_shap(f, x, bg);
    CHECK(e.base == doctest::Approx(5.0));
    CHECK(e.prediction == 10.0);
    CHECK(e.phi(0) == doctest::Approx(5.0));
    CHECK(e.phi(1) == 0.0);
    CHECK(e.phi(2) == 0.0);
    CHECK_THROWS_AS(tree_shap(f, x, Eigen::MatrixXd(0, 3)), ConfigError);
}

TEST_CASE("tree SHAP matches brute-force Shapley values") {
    Rng rng(32);
    for (int trial = 0; trial < 6; ++trial) {
        const Eigen::Index p = 3 + trial;  // 3..8 features
        const Eigen::MatrixXd x = uniform_matrix(30, p, rng);
        std::vector<double> y(30);
        for (std::size_t i = 0; i < 30; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            y[i] = x(ii, 0) * x(ii, 1) + (x(ii, p - 1) > 0.5 ? 1.0 : 0.0) + 0.1 * standard_normal(rng);
        }
        ForestConfig cfg;
        cfg.n_trees = 5;
        cfg.max_depth = 4;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const auto f = rf_fit(x, y, cfg);
        const Eigen::MatrixXd bg = x.topRows(4 + 2 * trial);  // up to 14 rows
        for (Eigen::Index i = 20; i < 24; ++i) {
            const Eigen::VectorXd xi = x.row(i).transpose();
            const auto e = tree_shap(f, xi, bg);
            const auto oracle = brute_force_shapley(f, xi, bg);
            CHECK((e.phi - oracle).cwiseAbs().maxCoeff() < 1e-8);
            CHECK(std::abs(e.base + e.phi.sum() - e.prediction) < 1e-8);
        }
    }
}

TEST_CASE("null player and symmetry axioms") {
    // ignores feature 2
    const auto f = single_tree({{0, 0.5, 1, 2, 0}, {1, 0.5, 3, 4, 0}, {-1, 0, -1, -1, 3.0}, {-1, 0, -1, -1, -1.0},
                                {-1, 0, -1, -1, 2.0}},
                               3);
    Rng rng(33);
    const Eigen::MatrixXd bg = uniform_matrix(10, 3, rng);
    for (int t = 0; t < 20; ++t) {
        const Eigen::VectorXd x = uniform_matrix(1, 3, rng).row(0).transpose();
        CHECK(tree_shap(f, x, bg).phi(2) == 0.0);
    }
    // symmetric table over two duplicated columns
    const auto s = single_tree({{0, 0.5, 1, 2, 0}, {1, 0.5, 3, 4, 0}, {1, 0.5, 5, 6, 0}, {-1, 0, -1, -1, 1.0},
                                {-1, 0, -1, -1, 4.0}, {-1, 0, -1, -1, 4.0}, {-1, 0, -1, -1, 9.0}},
                               2);
    Eigen::MatrixXd dup(12, 2);
    for (Eigen::Index i = 0; i < 12; ++i) dup(i, 0) = dup(i, 1) = uniform01(rng);
    for (Eigen::Index i = 0; i < 12; ++i) {
        const auto e = tree_shap(s, dup.row(i).transpose(), dup);
        CHECK(std::abs(e.phi(0) - e.phi(1)) < 1e-8);
    }
}

TEST_CASE("region importance normalization") {
    Eigen::MatrixXd phi(2, 3);
    phi << 2, -4, 6, -2, 4, -6;
    const auto r = shap_region_importance(phi);
    CHECK(r.mean_abs(0) == 2.0);
    CHECK(r.normalized(0) == 0.0);
    CHECK(r.normalized(1) == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(r.normalized(2) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(r.normalized(2) <= 1.0);
    CHECK(!r.degenerate);
    const auto flat = shap_region_importance(Eigen::MatrixXd::Constant(3, 4, 0.7));
    CHECK(flat.degenerate);
    CHECK(flat.normalized.cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(shap_region_importance(Eigen::MatrixXd(0, 3)), ConfigError);
}

TEST_CASE("importance ranking is stable under target scaling") {
    Rng rng(34);
    const Eigen::MatrixXd x = uniform_matrix(30, 6, rng);
    std::vector<double> y(30), y10(30);
    for (std::size_t i = 0; i < 30; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        y[i] = 3 * x(ii, 4) + 0.5 * x(ii, 1) + 0.05 * standard_normal(rng);
        y10[i] = 10 * y[i];
    }
    std::vector<std::string> ids(30, "s");
    const std::vector<int> regions{1, 2, 3, 4, 5, 6};
    ForestConfig cfg;
    cfg.n_trees = 30;
    const auto a = explain_class(x, y, ids, regions, ClassLabel::AD, cfg);
    const auto b = explain_class(x, y10, ids, regions, ClassLabel::AD, cfg);
    Eigen::Index ia, ib;
    a.importance.normalized.maxCoeff(&ia);
    b.importance.normalized.maxCoeff(&ib);
    CHECK(ia == 4);
    CHECK(ib == ia);
    CHECK(a.max_local_accuracy_error < 1e-8);
    CHECK(b.max_local_accuracy_error < 1e-8);
}

TEST_CASE("shap volume painting") {
    std::vector<std::uint32_t> labels(4 * 4 * 4, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < 8 ? 0 : (i < 36 ? 1 : 2);
    const AtlasMap atlas(Dims{4, 4, 4}, labels, 2);
    Eigen::VectorXd s(2);
    s << 0.0, 1.0;
    const auto painted = build_shap_volume(s, atlas);
    for (std::size_t i = 0; i < labels.size(); ++i) CHECK(painted[i] == (labels[i] == 2 ? 1.0f : 0.0f));
    s << 0.25, 1.0;
    const auto ones = build_shap_volume(s, atlas, Volume(Dims{4, 4, 4}, 1.0f));
    const auto plain = build_shap_volume(s, atlas);
    CHECK(ones == plain);
    const auto zero = build_shap_volume(s, atlas, Volume(Dims{4, 4, 4}, 0.0f));
    for (float v : zero.voxels()) CHECK(v == 0.0f);
    CHECK_THROWS_AS(build_shap_volume(s, atlas, Volume(Dims{4, 4, 3})), ShapeError);
    CHECK_THROWS_AS(build_shap_volume(Eigen::VectorXd::Zero(3), atlas), ShapeError);
}

TEST_CASE("shap CSV layout") {
    ShapResult r;
    r.label = ClassLabel::MCI;
    r.subject_ids = {"a"};
    r.region_ids = {3, 4};
    r.phi.resize(1, 2);
    r.phi << 0.5, -0.25;
    r.importance = shap_region_importance(r.phi);
    const auto dir = std::filesystem::temp_directory_path() / "ls_shap_csv";
    std::filesystem::create_directories(dir);
    write_shap_csv({r}, dir / "shap.csv");
    write_importance_csv({r}, dir / "imp.csv");
    std::ifstream a(dir / "shap.csv"), b(dir / "imp.csv");
    std::string h, l;
    std::getline(a, h);
    std::getline(a, l);
    CHECK(h == "class,subject_id,region,phi");
    CHECK(l == "MCI,a,3,0.5");
    std::getline(b, h);
    std::getline(b, l);
    CHECK(h == "class,region,s_r,s_tilde");
    CHECK(l.rfind("MCI,3,0.5,0.9999999", 0) == 0);
    std::filesystem::remove_all(dir);
}
