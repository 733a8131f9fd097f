#include "doctest.h"

#include "latentscope/error.hpp"
#include "latentscope/lrcp.hpp"
#include "latentscope/phantom.hpp"
#include "latentscope/rng.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace latentscope;

namespace {

std::vector<bool> halves(std::size_t n) {
    std::vector<bool> p(n, false);
    for (std::size_t i = n / 2; i < n; ++i) p[i] = true;
    return p;
}

Cohort small_cohort(double effect, std::uint64_t seed) {
    PhantomConfig cfg;
    cfg.dims = {16, 16, 16};
    cfg.region_count = 16;
    cfg.class_counts = {{ClassLabel::NOR, 20}, {ClassLabel::MCI, 20}, {ClassLabel::AD, 20}};
    if (effect != 0.0) {
        for (std::uint32_t r : {2u, 7u, 11u}) cfg.effects.push_back({r, ClassLabel::AD, effect});
    }
    cfg.seed = seed;
    return generate_phantom_cohort(cfg);
}

// Stand-in latent embeddings: PCA of the region profiles plus two random layers.
std::vector<EmbeddingMatrix> profile_embeddings(const RegionProfileMatrix& prof, std::uint64_t seed) {
    std::vector<EmbeddingMatrix> out;
    Rng rng(seed);
    for (std::size_t layer = 1; layer <= 2; ++layer) {
        EmbeddingMatrix e;
        e.method = Method::PCA;
        e.layer = layer;
        e.subject_ids = prof.subject_ids;
        if (layer == 1) {
            e.values = pca_fit_transform(prof.values).scores;
        } else {
            e.values.resize(prof.rows(), 3);
            for (Eigen::Index i = 0; i < e.values.rows(); ++i)
                for (Eigen::Index c = 0; c < 3; ++c) e.values(i, c) = standard_normal(rng);
        }
        out.push_back(e);
        e.method = Method::TSNE;  // second method slot, same values
        out.push_back(e);
    }
    return out;
}

std::size_t count_both(const LRCPGrid& g) {
    return static_cast<std::size_t>(
        std::count_if(g.cells.begin(), g.cells.end(), [](const LRCPCell& c) { return c.category == Category::Both; }));
}

}  // namespace

TEST_CASE("comparison parsing") {
    const auto c = parse_comparison("NOR_MCI_MCIc_AD");
    CHECK(c.classes == std::vector<ClassLabel>{ClassLabel::NOR, ClassLabel::MCI, ClassLabel::MCIc, ClassLabel::AD});
    CHECK(parse_comparison("NOR_AD").classes.size() == 2);
    CHECK_THROWS_AS(parse_comparison("NOR"), ConfigError);
    CHECK_THROWS_AS(parse_comparison("NOR_XYZ"), ConfigError);
    CHECK_THROWS_AS(parse_comparison("AD_AD"), ConfigError);
    CHECK(default_comparisons().size() == 4);
    CHECK(category_name(Category::CorrOnly) == "corr_only");
}

TEST_CASE("cell categories on constructed data") {
    Rng rng(41);
    LrcpOptions opt;
    const std::size_t n = 200;
    const auto pos = halves(n);
    std::vector<double> comp(n), reg(n);

    SUBCASE("planted class signal gives both") {
        for (std::size_t i = 0; i < n; ++i) {
            reg[i] = (pos[i] ? 1.0 : 0.0) + 0.1 * standard_normal(rng);
            comp[i] = reg[i] + 0.2 * standard_normal(rng);
        }
        const auto c = lrcp_cell(comp, reg, pos, opt);
        CHECK(c.category == Category::Both);
        CHECK(c.empirical_error < 0.05);
        CHECK(c.corrected_error >= c.empirical_error);
    }
    SUBCASE("shared confounder without class signal gives corr_only") {
        for (std::size_t i = 0; i < n; ++i) {
            const double u = standard_normal(rng);
            comp[i] = u + 0.3 * standard_normal(rng);
            reg[i] = u + 0.3 * standard_normal(rng);
        }
        const auto c = lrcp_cell(comp, reg, pos, opt);
        CHECK(c.category == Category::CorrOnly);
        CHECK(c.p < 1e-10);
    }
    SUBCASE("XOR structure needs the product term") {
        std::vector<bool> xor_pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            comp[i] = 2.0 * uniform01(rng) - 1.0;
            reg[i] = 2.0 * uniform01(rng) - 1.0;
            xor_pos[i] = comp[i] * reg[i] > 0.0;
        }
        const auto linear = lrcp_cell(comp, reg, xor_pos, opt);
        CHECK(!linear.classifies());
        auto q = opt;
        q.quadratic = true;
        const auto quad = lrcp_cell(comp, reg, xor_pos, q);
        CHECK(quad.classifies());
        CHECK(quad.correlated() == linear.correlated());
        if (!quad.correlated()) CHECK(quad.category == Category::ClassOnly);
    }
    SUBCASE("constant features are degenerate") {
        for (std::size_t i = 0; i < n; ++i) {
            comp[i] = 1.0;
            reg[i] = pos[i] ? 1.0 : 0.0;
        }
        const auto c = lrcp_cell(comp, reg, pos, opt);
        CHECK(c.degenerate);
        CHECK(c.category == Category::Neither);
        CHECK(!c.classifies());
    }
    SUBCASE("group size precondition") {
        std::vector<bool> few(n, false);
        for (std::size_t i = 0; i < 4; ++i) few[i] = true;
        for (std::size_t i = 0; i < n; ++i) comp[i] = reg[i] = standard_normal(rng);
        CHECK_THROWS_AS(lrcp_cell(comp, reg, few, opt), ConfigError);
    }
}

TEST_CASE("four categories partition every cell") {
    Rng rng(42);
    LrcpOptions opt;
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 40;
        const auto pos = halves(n);
        std::vector<double> comp(n), reg(n);
        const double a = uniform01(rng), b = uniform01(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double u = standard_normal(rng);
            reg[i] = a * (pos[i] ? 1.0 : 0.0) + standard_normal(rng) * 0.3;
            comp[i] = b * u + (1 - b) * reg[i];
        }
        const auto c = lrcp_cell(comp, reg, pos, opt);
        const bool corr = c.p < opt.alpha, cls = c.corrected_error < 0.5;
        int holds = 0;
        holds += (c.category == Category::Both) == (corr && cls);
        holds += (c.category == Category::CorrOnly) == (corr && !cls);
        holds += (c.category == Category::ClassOnly) == (!corr && cls);
        holds += (c.category == Category::Neither) == (!corr && !cls);
        CHECK(holds == 4);
    }
}

TEST_CASE("grid layout, summaries and maps") {
    const auto cohort = small_cohort(0.2, 5);
    const auto prof = build_region_profiles(cohort);
    const auto embeddings = profile_embeddings(prof, 6);
    const std::vector<Comparison> cmps{parse_comparison("NOR_AD"), parse_comparison("NOR_MCI")};
    const auto grid = lrcp_grid(embeddings, prof, cohort.labels(), cmps, LrcpOptions{});
    const std::size_t R = 16;
    CHECK(grid.cells.size() == 2 * 2 * 2 * 3 * R);
    CHECK(grid.methods == std::vector<Method>{Method::PCA, Method::TSNE});
    CHECK(grid.layers == std::vector<std::size_t>{1, 2});
    // ordering: comparisons x methods x layers x components x regions
    const auto& probe = grid.at(1, 1, 0, 2, 5);
    CHECK(probe.comparison == "NOR_MCI");
    CHECK(probe.method == Method::TSNE);
    CHECK(probe.layer == 1);
    CHECK(probe.component == 2);
    CHECK(probe.region == 6);
    CHECK(probe.n == 40);

    const auto summary = summary_counts(grid);
    CHECK(summary.size() == 2 * 2 * 2 * 3);
    for (const auto& s : summary) {
        CHECK(s.significant + s.non_significant == R);
        CHECK(s.categories[0] + s.categories[1] + s.categories[2] + s.categories[3] == R);
        if (s.comparison == "NOR_AD") {
            CHECK(s.significant >= 3);
        } else {
            CHECK(s.significant <= 2);
        }
    }

    const auto map = accuracy_map(grid, "NOR_AD", Method::PCA, 1, 0, cohort.atlas);
    float best = -1;
    std::uint32_t best_region = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (cohort.atlas[i] == 0) CHECK(map[i] == 0.0f);
        CHECK(map[i] >= 0.0f);
        CHECK(map[i] <= 1.0f);
        if (map[i] > best) {
            best = map[i];
            best_region = cohort.atlas[i];
        }
    }
    CHECK((best_region == 2 || best_region == 7 || best_region == 11));
    CHECK_THROWS_AS(accuracy_map(grid, "NOR_MCIc", Method::PCA, 1, 0, cohort.atlas), ConfigError);

    auto partial = embeddings;
    partial.pop_back();
    try {
        lrcp_grid(partial, prof, cohort.labels(), cmps, LrcpOptions{});
        FAIL("expected a missing-embedding error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("tsne/L2") != std::string::npos);
    }
}

TEST_CASE("uniform corrected error gives a flat accuracy map") {
    std::vector<std::uint32_t> labels(27, 1);
    labels[0] = 0;
    labels[26] = 2;
    const AtlasMap atlas(Dims{3, 3, 3}, labels, 2);
    LRCPGrid g;
    g.comparisons = {"NOR_AD"};
    g.methods = {Method::PCA};
    g.layers = {1};
    g.region_ids = {1, 2};
    for (std::size_t c = 0; c < 3; ++c) {
        for (int r : {1, 2}) {
            LRCPCell cell;
            cell.comparison = "NOR_AD";
            cell.component = c;
            cell.region = r;
            cell.corrected_error = 0.5;
            g.cells.push_back(cell);
        }
    }
    const auto map = accuracy_map(g, "NOR_AD", Method::PCA, 1, 1, atlas);
    CHECK(map[0] == 0.0f);
    for (std::size_t i = 1; i < 27; ++i) CHECK(map[i] == 0.5f);
    const auto rows = summary_counts(g);
    CHECK(rows.size() == 3);
    CHECK(rows[0].significant == 0);
    CHECK(rows[0].non_significant == 2);
}

TEST_CASE("null grid has almost no both cells") {
    const auto cohort = small_cohort(0.0, 7);
    const auto prof = build_region_profiles(cohort);
    const std::vector<Comparison> cmps{parse_comparison("NOR_AD"), parse_comparison("NOR_MCI")};
    const auto grid = lrcp_grid(profile_embeddings(prof, 8), prof, cohort.labels(), cmps, LrcpOptions{});
    for (const auto& s : summary_counts(grid)) CHECK(s.categories[0] <= 2);
}

TEST_CASE("both count is monotone in the planted effect") {
    for (std::uint64_t seed : {11u, 12u}) {
        std::size_t prev = 0;
        for (double effect : {0.0, 0.1, 0.2, 0.4}) {
            const auto cohort = small_cohort(effect, seed);
            const auto prof = build_region_profiles(cohort);
            // one fixed latent tied to the AD label; constant fillers stay degenerate
            EmbeddingMatrix e;
            e.subject_ids = prof.subject_ids;
            e.values.resize(prof.rows(), 3);
            Rng rng(seed + 100);
            for (std::size_t i = 0; i < cohort.size(); ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                e.values(row, 0) = (cohort.labels()[i] == ClassLabel::AD ? 1.0 : 0.0) + 0.5 * standard_normal(rng);
                e.values(row, 1) = 0.0;
                e.values(row, 2) = 0.0;
            }
            const std::vector<EmbeddingMatrix> embeddings{e};
            const auto grid = lrcp_grid(embeddings, prof, cohort.labels(), {parse_comparison("NOR_AD")}, LrcpOptions{});
            const auto both = count_both(grid);
            CHECK(both >= prev);
            prev = both;
            if (effect == 0.4) {
                for (std::size_t r : {2u, 7u, 11u})
                    CHECK(grid.at(0, 0, 0, 0, r - 1).category == Category::Both);
            }
        }
    }
}

TEST_CASE("label permutation falls to the binomial null") {
    const auto cohort = small_cohort(0.2, 13);
    const auto prof = build_region_profiles(cohort);
    const auto embeddings = profile_embeddings(prof, 14);
    auto labels = cohort.labels();
    const std::vector<Comparison> cmp{parse_comparison("NOR_AD")};
    const LrcpOptions opt;
    const std::size_t R = 16;
    const boost::math::binomial null_dist(static_cast<double>(R), opt.bound.delta);
    const double q95 = std::ceil(boost::math::quantile(null_dist, 0.95));

    const auto real = summary_counts(lrcp_grid(embeddings, prof, labels, cmp, opt));
    Rng rng(15);
    std::vector<std::size_t> totals;
    for (int p = 0; p < 20; ++p) {
        std::shuffle(labels.begin(), labels.end(), rng);
        const auto rows = summary_counts(lrcp_grid(embeddings, prof, labels, cmp, opt));
        for (const auto& r : rows) totals.push_back(r.significant);
    }
    std::nth_element(totals.begin(), totals.begin() + static_cast<long>(totals.size() / 2), totals.end());
    CHECK(static_cast<double>(totals[totals.size() / 2]) <= q95);
    for (const auto& r : real) CHECK(static_cast<double>(r.significant) > q95);
}

TEST_CASE("grid and summary CSV layout") {
    const auto cohort = small_cohort(0.2, 5);
    const auto prof = build_region_profiles(cohort);
    const auto grid = lrcp_grid(profile_embeddings(prof, 6), prof, cohort.labels(), {parse_comparison("NOR_AD")},
                                LrcpOptions{});
    const auto dir = std::filesystem::temp_directory_path() / "ls_lrcp_csv";
    std::filesystem::create_directories(dir);
    write_grid_csv(grid, dir / "grid.csv");
    write_summary_csv(summary_counts(grid), dir / "summary.csv");
    std::ifstream g(dir / "grid.csv"), s(dir / "summary.csv");
    std::string h, l;
    std::getline(g, h);
    std::getline(g, l);
    CHECK(h == "comparison,method,layer,component,region,r,p,emp_error,corr_error,category");
    CHECK(l.rfind("NOR_AD,pca,L1,D0,1,", 0) == 0);
    std::size_t lines = 1;
    while (std::getline(g, l)) ++lines;
    CHECK(lines == grid.cells.size());
    std::getline(s, h);
    CHECK(h == "method,group,layer,component,significant,non_significant,both,corr_only,class_only,neither");
    std::filesystem::remove_all(dir);
}
