#include "doctest.h"

#include "latentscope/error.hpp"
#include "latentscope/phantom.hpp"
#include "latentscope/region.hpp"
#include "latentscope/rng.hpp"
#include "latentscope/stats.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace latentscope;

namespace {

// Two-tailed Student-t p-value by composite Simpson integration of the density over [0, |t|].
double t_pvalue_oracle(double t, double dof) {
    const double c = std::exp(std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof)) / std::sqrt(dof * M_PI);
    auto f = [&](double s) { return c * std::pow(1.0 + s * s / dof, -0.5 * (dof + 1.0)); };
    const int m = 200000;
    const double h = std::abs(t) / m;
    double acc = f(0.0) + f(std::abs(t));
    for (int i = 1; i < m; ++i) acc += (i % 2 == 1 ? 4.0 : 2.0) * f(i * h);
    return 1.0 - 2.0 * acc * h / 3.0;
}

std::vector<double> normals(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = standard_normal(rng);
    return v;
}

EmbeddingMatrix embedding_from(const Eigen::MatrixXd& values, const std::vector<std::string>& ids) {
    EmbeddingMatrix e;
    e.method = Method::PCA;
    e.layer = 1;
    e.values = values;
    e.subject_ids = ids;
    return e;
}

std::vector<std::string> make_ids(std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("s" + std::to_string(i));
    return ids;
}

}  // namespace

TEST_CASE("pearson examples") {
    const std::vector<double> a{1, 2, 3}, b{2, 4, 6};
    CHECK(pearson(a, b) == doctest::Approx(1.0).epsilon(1e-15));
    const std::vector<double> c{1, 2, 3, 4}, d{1, 3, 2, 4};
    CHECK(pearson(c, d) == doctest::Approx(0.8).epsilon(1e-14));
    const std::vector<double> neg{-1, -2, -3};
    CHECK(pearson(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
    const std::vector<double> flat{5, 5, 5};
    CHECK_THROWS_AS(pearson(a, flat), UndefinedStatistic);
    const std::vector<double> two{1, 2};
    CHECK_THROWS_AS(pearson(two, two), ConfigError);
    CHECK_THROWS_AS(pearson(a, c), ConfigError);
}

TEST_CASE("pearson symmetry and affine invariance") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const auto x = normals(20, rng);
        auto y = normals(20, rng);
        for (std::size_t i = 0; i < 20; ++i) y[i] += 0.5 * x[i];
        const double r = pearson(x, y);
        CHECK(r == doctest::Approx(pearson(y, x)).epsilon(1e-13));
        const double a = (uniform01(rng) - 0.5) * 10.0;
        const double b = (uniform01(rng) - 0.5) * 10.0;
        std::vector<double> ax(x);
        for (auto& v : ax) v = a * v + b;
        CHECK(pearson(ax, y) == doctest::Approx((a > 0 ? 1.0 : -1.0) * r).epsilon(1e-10));
    }
}

TEST_CASE("pearson p-value edge cases and examples") {
    CHECK(pearson_pvalue(0.0, 300) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pearson_pvalue(1.0, 10) == 0.0);
    CHECK(pearson_pvalue(-1.0, 10) == 0.0);
    CHECK_THROWS_AS(pearson_pvalue(0.5, 2), ConfigError);
    CHECK_THROWS_AS(pearson_pvalue(1.5, 10), ConfigError);
    CHECK(std::abs(pearson_pvalue(0.1133, 300) - 0.050) <= 0.002);
    const double r = 0.11;
    CHECK(std::abs(r * r - 0.0121) < 1e-4);
    CHECK(std::abs(critical_r(300) - 0.1133) <= 0.002);
}

TEST_CASE("p-values match numerical integration of the t density") {
    for (double dof : {1.0, 10.0, 100.0, 298.0}) {
        const auto n = static_cast<std::size_t>(dof) + 2;
        for (double r : {0.02, 0.1, 0.3, 0.6, 0.9}) {
            const double t = r * std::sqrt(dof / (1.0 - r * r));
            CHECK(std::abs(pearson_pvalue(r, n) - t_pvalue_oracle(t, dof)) < 1e-6);
            CHECK(pearson_pvalue(-r, n) == pearson_pvalue(r, n));
        }
    }
}

TEST_CASE("p-value monotonicity") {
    for (std::size_t n : {5u, 30u, 300u}) {
        double prev = 1.0;
        for (double r = 0.0; r < 0.99; r += 0.01) {
            const double p = pearson_pvalue(r, n);
            CHECK(p <= prev);
            CHECK(p >= 0.0);
            prev = p;
        }
    }
    for (double r : {0.05, 0.2, 0.5}) {
        double prev = 1.0;
        for (std::size_t n = 3; n < 400; n += 7) {
            const double p = pearson_pvalue(r, n);
            CHECK(p <= prev);
            prev = p;
        }
    }
}

TEST_CASE("null calibration of the uncorrected test") {
    Rng rng(12);
    int hits = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto x = normals(300, rng);
        const auto y = normals(300, rng);
        if (pearson_pvalue(pearson(x, y), 300) < 0.05) ++hits;
    }
    const double rate = hits / 1000.0;
    CHECK(rate >= 0.03);
    CHECK(rate <= 0.07);
}

TEST_CASE("correlate_embedding_regions basics") {
    Rng rng(13);
    const std::size_t n = 30;
    const auto ids = make_ids(n);
    Eigen::MatrixXd emb(n, 3);
    for (Eigen::Index i = 0; i < emb.rows(); ++i)
        for (Eigen::Index c = 0; c < 3; ++c) emb(i, c) = standard_normal(rng);
    RegionProfileMatrix prof;
    prof.subject_ids = ids;
    prof.region_ids = {1, 2, 3};
    prof.values.resize(n, 3);
    for (Eigen::Index i = 0; i < prof.values.rows(); ++i) {
        prof.values(i, 0) = emb(i, 1);  // duplicate of component 1
        prof.values(i, 1) = standard_normal(rng);
        prof.values(i, 2) = 0.25;  // constant region
    }
    std::vector<ClassLabel> labels(n, ClassLabel::NOR);
    labels[0] = ClassLabel::AD;
    labels[1] = ClassLabel::AD;
    for (std::size_t i = 2; i < 12; ++i) labels[i] = ClassLabel::MCI;

    const auto pooled = correlate_embedding_regions(embedding_from(emb, ids), prof, labels, false);
    REQUIRE(pooled.rows.size() == 9);
    for (const auto& row : pooled.rows) {
        CHECK(!row.label.has_value());
        CHECK(row.n == n);
        if (row.region == 3) {
            CHECK(!row.defined);
            continue;
        }
        CHECK(row.defined);
        CHECK(row.r_squared == doctest::Approx(row.r * row.r).epsilon(1e-12));
        CHECK(row.p_value >= 0.0);
        CHECK(row.p_value <= 1.0);
        if (row.region == 1 && row.component == 1) {
            CHECK(row.r == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(row.p_value == 0.0);
        }
    }

    const auto strat = correlate_embedding_regions(embedding_from(emb, ids), prof, labels, true);
    // NOR (18) and MCI (10) kept; AD (2) skipped with a note
    CHECK(strat.rows.size() == 18);
    REQUIRE(strat.notes.size() == 1);
    CHECK(strat.notes[0].find("AD") != std::string::npos);

    auto shuffled = embedding_from(emb, ids);
    std::swap(shuffled.subject_ids[0], shuffled.subject_ids[1]);
    CHECK_THROWS_AS(correlate_embedding_regions(shuffled, prof, labels, false), ConfigError);
}

TEST_CASE("null region count matches the binomial expectation") {
    Rng rng(14);
    const std::size_t n = 300, regions = 116;
    const auto ids = make_ids(n);
    std::vector<ClassLabel> labels(n, ClassLabel::NOR);
    RegionProfileMatrix prof;
    prof.subject_ids = ids;
    for (std::size_t j = 0; j < regions; ++j) prof.region_ids.push_back(static_cast<int>(j + 1));
    prof.values.resize(n, regions);
    Eigen::MatrixXd emb(n, 3);
    double total = 0.0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        for (Eigen::Index i = 0; i < prof.values.rows(); ++i) {
            for (Eigen::Index j = 0; j < prof.values.cols(); ++j) prof.values(i, j) = standard_normal(rng);
            for (Eigen::Index c = 0; c < 3; ++c) emb(i, c) = standard_normal(rng);
        }
        const auto table = correlate_embedding_regions(embedding_from(emb, ids), prof, labels, false);
        for (const auto& row : table.rows) total += row.p_value < 0.05 ? 1.0 : 0.0;
    }
    const double per_component = total / (3.0 * trials);
    CHECK(per_component == doctest::Approx(5.8).epsilon(0.1));
}

TEST_CASE("planted region tops the correlation list") {
    PhantomConfig cfg;
    cfg.dims = {16, 16, 16};
    cfg.region_count = 20;
    cfg.class_counts = {{ClassLabel::NOR, 20}, {ClassLabel::AD, 20}};
    cfg.effects = {{5, ClassLabel::AD, 0.2}, {11, ClassLabel::AD, -0.2}};
    cfg.seed = 3;
    const auto cohort = generate_phantom_cohort(cfg);
    const auto prof = build_region_profiles(cohort);
    // a class-driven stand-in for a latent component
    Eigen::MatrixXd emb(static_cast<Eigen::Index>(cohort.size()), 3);
    Rng rng(15);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        emb(ii, 0) = (cohort.subjects[i].label == ClassLabel::AD ? 1.0 : 0.0) + 0.3 * standard_normal(rng);
        emb(ii, 1) = standard_normal(rng);
        emb(ii, 2) = standard_normal(rng);
    }
    const auto table = correlate_embedding_regions(embedding_from(emb, prof.subject_ids), prof, cohort.labels(), false);
    const auto top = top_regions(table, 10);
    REQUIRE(top.size() == 10);
    std::vector<int> ids;
    for (const auto& r : top) ids.push_back(r.region);
    CHECK(std::find(ids.begin(), ids.end(), 5) != ids.end());
    CHECK(std::find(ids.begin(), ids.end(), 11) != ids.end());
}

TEST_CASE("top_regions ordering rules") {
    CorrelationTable t;
    auto add = [&](int region, double r, double p) {
        CorrelationResult row;
        row.region = region;
        row.r = r;
        row.r_squared = r * r;
        row.p_value = p;
        t.rows.push_back(row);
    };
    add(4, 0.5, 0.01);
    add(2, -0.5, 0.01);
    add(3, 0.2, 0.2);
    add(1, 0.1, 0.3);
    add(3, -0.7, 0.001);  // second row for region 3 wins
    const auto all = top_regions(t, 100);
    REQUIRE(all.size() == 4);
    CHECK(all[0].region == 3);
    CHECK(all[0].abs_r == doctest::Approx(0.7));
    CHECK(all[1].region == 2);  // tie with region 4 broken by id
    CHECK(all[2].region == 4);
    CHECK(all[3].region == 1);
    CHECK(top_regions(t, 2).size() == 2);
    const auto sig = top_regions(t, 100, true);
    CHECK(sig.size() == 3);
}

TEST_CASE("overlap report") {
    CHECK_THROWS_AS(overlap_report({{"A", {1, 2}}}), ConfigError);
    const auto same = overlap_report({{"A", {1, 2, 3}}, {"B", {3, 2, 1}}});
    REQUIRE(same.pairs.size() == 1);
    CHECK(same.pairs[0].regions == std::vector<int>{1, 2, 3});
    const auto disjoint = overlap_report({{"A", {1, 2}}, {"B", {3, 4}}, {"C", {5}}});
    CHECK(disjoint.pairs.size() == 3);
    for (const auto& p : disjoint.pairs) CHECK(p.regions.empty());
    CHECK(disjoint.recurring.empty());
    const auto shared = overlap_report({{"NOR_AD", {7, 1}}, {"NOR_MCI", {7, 2}}, {"NOR_MCIc", {7, 3}}});
    for (const auto& p : shared.pairs) CHECK(p.regions == std::vector<int>{7});
    CHECK(shared.recurring == std::vector<int>{7});
}

TEST_CASE("correlation and overlap CSV layout") {
    const auto dir = std::filesystem::temp_directory_path() / "ls_stats_csv";
    std::filesystem::create_directories(dir);
    CorrelationTable t;
    CorrelationResult row;
    row.method = Method::UMAP;
    row.layer = 2;
    row.component = 1;
    row.region = 9;
    row.label = ClassLabel::MCIc;
    row.n = 12;
    row.r = 0.5;
    row.r_squared = 0.25;
    row.p_value = 0.1;
    t.rows.push_back(row);
    row.defined = false;
    row.label.reset();
    t.rows.push_back(row);
    write_correlation_csv(t, dir / "c.csv", {"config_hash=abc"});
    std::ifstream in(dir / "c.csv");
    std::string l0, l1, l2, l3;
    std::getline(in, l0);
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    CHECK(l0 == "# config_hash=abc");
    CHECK(l1 == "method,layer,component,region,class,n,r,r2,p");
    CHECK(l2 == "umap,L2,D1,9,MCIc,12,0.5,0.25,0.1");
    CHECK(l3 == "umap,L2,D1,9,pooled,12,NA,NA,NA");

    write_overlap_csv(overlap_report({{"A", {1, 2}}, {"B", {2}}}), dir / "o.csv");
    std::ifstream o(dir / "o.csv");
    std::getline(o, l0);
    std::getline(o, l1);
    CHECK(l0 == "comparison_a,comparison_b,region");
    CHECK(l1 == "A,B,2");
    std::filesystem::remove_all(dir);
}
