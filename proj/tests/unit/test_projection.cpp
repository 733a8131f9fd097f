#include "doctest.h"

#include "latentscope/error.hpp"
#include "latentscope/projection.hpp"
#include "latentscope/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace latentscope;

namespace {

// Cyclic Jacobi eigenvalue iteration; returns eigenvalues descending with matching columns.
void jacobi_eigen(Eigen::MatrixXd a, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
    const Eigen::Index n = a.rows();
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
    values.resize(n);
    vectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
        vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
    }
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = standard_normal(rng);
    return m;
}

// Two Gaussian clusters (unit sigma) whose means lie `separation` apart along the diagonal, so
// per-feature standardization keeps the gap.
Eigen::MatrixXd two_clusters(double separation, Rng& rng, std::size_t per = 10, Eigen::Index dims = 5) {
    Eigen::MatrixXd x = random_matrix(static_cast<Eigen::Index>(2 * per), dims, rng);
    const double offset = separation / std::sqrt(static_cast<double>(dims));
    x.bottomRows(static_cast<Eigen::Index>(per)).array() += offset;
    return x;
}

// Perceptron with bias: succeeds only on linearly separable input.
bool linearly_separable(const Eigen::MatrixXd& y, std::size_t per) {
    const Eigen::Index n = y.rows();
    Eigen::MatrixXd z = center_columns(y);
    const double scale = z.cwiseAbs().maxCoeff();
    if (scale > 0) z /= scale;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(z.cols());
    double bias = 0.0;
    for (int epoch = 0; epoch < 20000; ++epoch) {
        bool clean = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double label = static_cast<std::size_t>(i) < per ? -1.0 : 1.0;
            if (label * (z.row(i).dot(w) + bias) <= 0.0) {
                w += label * z.row(i).transpose();
                bias += label;
                clean = false;
            }
        }
        if (clean) return true;
    }
    return false;
}

std::vector<ClassLabel> cluster_labels(std::size_t per) {
    std::vector<ClassLabel> l(per, ClassLabel::NOR);
    l.resize(2 * per, ClassLabel::AD);
    return l;
}

}  // namespace

TEST_CASE("standardize and distances") {
    Rng rng(1);
    Eigen::MatrixXd x = random_matrix(20, 5, rng);
    x.col(3).setConstant(2.5);
    auto z = standardize(x);
    for (Eigen::Index c = 0; c < 5; ++c) {
        CHECK(std::abs(z.col(c).mean()) < 1e-12);
        if (c == 3) {
            CHECK(z.col(c).norm() == 0.0);
        } else {
            CHECK(z.col(c).squaredNorm() / 20.0 == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    auto d2 = squared_distances(x);
    for (Eigen::Index i = 0; i < 20; ++i) {
        CHECK(d2(i, i) == 0.0);
        for (Eigen::Index j = 0; j < 20; ++j) {
            CHECK(d2(i, j) == d2(j, i));
            CHECK(d2(i, j) == doctest::Approx((x.row(i) - x.row(j)).squaredNorm()).epsilon(1e-10));
        }
    }
}

TEST_CASE("pca line example") {
    Eigen::MatrixXd x(4, 2);
    x << 1, 1, -1, -1, 2, 2, -2, -2;
    auto r = pca_fit_transform(x, 2);
    CHECK(r.model.axes(0, 0) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(r.model.axes(1, 0) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(r.model.eigenvalues(0) == doctest::Approx(20.0 / 3.0).epsilon(1e-12));
    CHECK(std::abs(r.model.eigenvalues(1)) < 1e-12);
    CHECK(r.model.rank_deficient);
}

TEST_CASE("pca agrees with a Jacobi eigendecomposition on 50x50 inputs") {
    Rng rng(2);
    for (int trial = 0; trial < 3; ++trial) {
        Eigen::MatrixXd x = random_matrix(50, 50, rng);
        for (Eigen::Index c = 0; c < 50; ++c) x.col(c) *= 1.0 + 0.1 * static_cast<double>(c);
        auto r = pca_fit_transform(x, 3);
        const Eigen::MatrixXd xc = center_columns(x);
        Eigen::VectorXd vals;
        Eigen::MatrixXd vecs;
        jacobi_eigen(xc.transpose() * xc / 49.0, vals, vecs);
        for (Eigen::Index c = 0; c < 3; ++c) {
            CHECK(r.model.eigenvalues(c) == doctest::Approx(vals(c)).epsilon(1e-10));
            CHECK(std::abs(r.model.eigenvalues(c) - vals(c)) < 1e-8);
            CHECK(std::abs(std::abs(r.model.axes.col(c).dot(vecs.col(c))) - 1.0) < 1e-8);
            // projected variance equals the eigenvalue
            CHECK(r.scores.col(c).squaredNorm() / 49.0 == doctest::Approx(r.model.eigenvalues(c)).epsilon(1e-10));
        }
        const Eigen::MatrixXd gram = r.model.axes.transpose() * r.model.axes;
        CHECK((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(r.model.eigenvalues(0) >= r.model.eigenvalues(1));
        CHECK(r.model.eigenvalues(1) >= r.model.eigenvalues(2));
    }
}

TEST_CASE("pca wide input uses the Gram route consistently") {
    Rng rng(3);
    Eigen::MatrixXd x = random_matrix(12, 300, rng);
    auto r = pca_fit_transform(x, 3);
    const Eigen::MatrixXd xc = center_columns(x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xc.transpose() * xc / 11.0);
    for (Eigen::Index c = 0; c < 3; ++c) {
        CHECK(r.model.eigenvalues(c) == doctest::Approx(eig.eigenvalues()(299 - c)).epsilon(1e-9));
        CHECK(std::abs(std::abs(r.model.axes.col(c).dot(eig.eigenvectors().col(299 - c))) - 1.0) < 1e-8);
    }
    // sign convention: largest-magnitude loading positive
    for (Eigen::Index c = 0; c < 3; ++c) {
        Eigen::Index arg;
        r.model.axes.col(c).cwiseAbs().maxCoeff(&arg);
        CHECK(r.model.axes(arg, c) > 0.0);
    }
    // Gram-only scores agree up to sign per component
    auto g = pca_scores_from_gram(xc * xc.transpose());
    for (Eigen::Index c = 0; c < 3; ++c) {
        CHECK(std::abs(std::abs(g.col(c).dot(r.scores.col(c))) - r.scores.col(c).squaredNorm()) <
              1e-8 * r.scores.col(c).squaredNorm());
    }
}

TEST_CASE("pca on a duplicated dataset keeps its axes") {
    Rng rng(4);
    Eigen::MatrixXd x = random_matrix(15, 6, rng);
    Eigen::MatrixXd twice(30, 6);
    twice << x, x;
    auto a = pca_fit_transform(x), b = pca_fit_transform(twice);
    CHECK((a.model.axes - b.model.axes).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_THROWS_AS(pca_fit_transform(Eigen::MatrixXd::Zero(1, 3)), ConfigError);
}

TEST_CASE("pls first weight follows the response column") {
    Rng rng(5);
    // orthogonal, centered, unit-variance columns
    Eigen::MatrixXd raw = center_columns(random_matrix(40, 6, rng));
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(40, 6);
    Eigen::MatrixXd x = standardize(q);
    const Eigen::Index j = 2;
    Eigen::MatrixXd y = x.col(j);
    auto m = pls_fit(x, y, 3);
    CHECK(std::abs(std::abs(m.weights(j, 0)) - 1.0) < 1e-8);
    CHECK(m.weights.col(0).norm() == doctest::Approx(1.0));

    // appending a column orthogonal to everything leaves w1 unchanged
    Eigen::MatrixXd wider(40, 7);
    Eigen::MatrixXd extra = center_columns(random_matrix(40, 1, rng));
    extra -= x * (x.transpose() * x).ldlt().solve(x.transpose() * extra);
    wider << x, extra / std::sqrt(extra.squaredNorm() / 40.0);
    auto m2 = pls_fit(wider, y, 1);
    CHECK((m2.weights.col(0).head(6) - m.weights.col(0)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(m2.weights(6, 0)) < 1e-8);
}

TEST_CASE("pls first score dominates random directions") {
    Rng rng(6);
    Eigen::MatrixXd x = standardize(random_matrix(60, 8, rng));
    std::vector<ClassLabel> labels;
    for (int i = 0; i < 60; ++i) labels.push_back(x(i, 0) + 0.5 * x(i, 3) + 0.3 * standard_normal(rng) > 0 ? ClassLabel::AD : ClassLabel::NOR);
    const Eigen::MatrixXd y = center_columns(one_hot(labels));
    auto m = pls_fit(x, one_hot(labels));
    const double best = (y.transpose() * (x * m.weights.col(0))).squaredNorm();
    for (int t = 0; t < 1000; ++t) {
        Eigen::VectorXd w = random_matrix(8, 1, rng);
        w.normalize();
        CHECK((y.transpose() * (x * w)).squaredNorm() <= best * (1 + 1e-12));
    }
    for (Eigen::Index c = 0; c < 3; ++c) {
        if (m.weights.col(c).norm() > 0) CHECK(m.weights.col(c).norm() == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(pls_fit(x, Eigen::MatrixXd::Ones(60, 1)), ConfigError);
    CHECK_THROWS_AS(pls_fit(x, one_hot(std::vector<ClassLabel>(60, ClassLabel::NOR))), ConfigError);
}

TEST_CASE("t-SNE affinity helpers") {
    std::vector<double> uniform(7, 1.0 / 7.0);
    CHECK(perplexity_of(uniform) == doctest::Approx(7.0).epsilon(1e-12));
    Eigen::MatrixXd p(2, 2);
    p << 0.0, 0.5, 0.5, 0.0;
    CHECK(kl_divergence(p, p) == 0.0);
    Eigen::MatrixXd d2 = Eigen::MatrixXd::Ones(5, 5);
    d2.diagonal().setZero();
    double h = 0.0;
    auto row = conditional_row(d2, 0, 3.0, &h);
    CHECK(row[0] == 0.0);
    CHECK(std::exp2(h) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("t-SNE calibration and convergence properties") {
    Rng rng(7);
    Eigen::MatrixXd x = random_matrix(100, 5, rng);
    TsneOptions o;
    o.seed = 11;
    auto r = tsne_embed(x, o);
    CHECK(r.perplexity_used == 30.0);
    CHECK(r.warnings.empty());
    for (double perp : r.perplexities) CHECK(std::abs(perp - 30.0) < 1e-3);
    CHECK(r.p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((r.p - r.p.transpose()).cwiseAbs().maxCoeff() == 0.0);
    // rows of the conditional distribution sum to 1
    const Eigen::MatrixXd d2 = squared_distances(standardize(x));
    double h = 0.0;
    auto row = conditional_row(d2, 5, 0.1, &h);
    double s = 0.0;
    for (double v : row) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
    // KL non-increasing over the last 100 iterations
    REQUIRE(r.kl_history.size() == 1000);
    for (std::size_t i = 901; i < 1000; ++i) CHECK(r.kl_history[i] <= r.kl_history[i - 1] + 1e-6);
    CHECK(r.embedding.allFinite());
    auto again = tsne_embed(x, o);
    CHECK(again.embedding == r.embedding);
}

TEST_CASE("t-SNE lowers perplexity for small n and handles duplicates") {
    Rng rng(8);
    Eigen::MatrixXd x = random_matrix(20, 4, rng);
    x.row(3) = x.row(4);
    auto r = tsne_embed(x, TsneOptions{});
    CHECK(r.perplexity_used == 6.0);
    CHECK(r.warnings.size() == 2);
    CHECK(r.embedding.allFinite());
    auto zero = tsne_embed(Eigen::MatrixXd::Zero(12, 3), TsneOptions{});
    CHECK(zero.embedding.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("t-SNE separates the planted two-cluster benchmark") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        auto x = two_clusters(10.0, rng);
        TsneOptions o;
        o.seed = seed;
        auto r = tsne_embed(x, o);
        CHECK(linearly_separable(r.embedding, 10));
    }
}

TEST_CASE("UMAP curve fit matches a grid-search least-squares oracle") {
    auto ab = find_ab(1.0, 0.1);
    CHECK(ab.a == doctest::Approx(1.577).epsilon(0.01));
    CHECK(ab.b == doctest::Approx(0.895).epsilon(0.01));
    // oracle: brute-force grid over (a, b), then local refinement
    auto sse = [](double a, double b) {
        double s = 0.0;
        for (int i = 0; i < 300; ++i) {
            const double x = 3.0 * i / 299.0;
            const double e = 1.0 / (1.0 + a * std::pow(x, 2 * b)) - umap_target_curve(x, 1.0, 0.1);
            s += e * e;
        }
        return s;
    };
    double ba = 1, bb = 1, best = sse(1, 1);
    for (double a = 0.5; a <= 3.0; a += 0.01)
        for (double b = 0.5; b <= 1.5; b += 0.005)
            if (double s = sse(a, b); s < best) best = s, ba = a, bb = b;
    for (double step = 0.005; step > 1e-7; step /= 2)
        for (int it = 0; it < 50; ++it)
            for (auto [da, db] : {std::pair{step, 0.0}, {-step, 0.0}, {0.0, step}, {0.0, -step}})
                if (double s = sse(ba + da, bb + db); s < best) best = s, ba += da, bb += db;
    CHECK(sse(ab.a, ab.b) <= best * (1 + 1e-6));
    double max_err = 0.0;
    for (int i = 0; i <= 3000; ++i) {
        const double x = 3.0 * i / 3000.0;
        const double fit = 1.0 / (1.0 + ab.a * std::pow(x, 2 * ab.b));
        const double oracle = 1.0 / (1.0 + ba * std::pow(x, 2 * bb));
        max_err = std::max(max_err, std::abs(fit - oracle));
    }
    CHECK(max_err < 0.01);
}

TEST_CASE("UMAP graph properties") {
    Rng rng(9);
    Eigen::MatrixXd x = random_matrix(40, 6, rng);
    auto g = umap_graph(squared_distances(x), 15);
    CHECK(g.weights == g.weights.transpose());
    for (Eigen::Index i = 0; i < 40; ++i) {
        CHECK(g.weights(i, i) == 0.0);
        std::size_t degree = 0;
        for (Eigen::Index j = 0; j < 40; ++j) {
            CHECK(g.weights(i, j) >= 0.0);
            CHECK(g.weights(i, j) <= 1.0);
            degree += g.weights(i, j) > 0.0 ? 1 : 0;
        }
        CHECK(degree >= 14);
        // nearest neighbour has membership 1
        CHECK(g.weights.row(i).maxCoeff() == 1.0);
    }
    CHECK(g.components == 1);
    CHECK_THROWS_AS(umap_graph(squared_distances(x.topRows(10)), 15), ConfigError);

    std::vector<double> w{0.2, 1.0, 0.0, 0.7};
    CHECK(umap_cross_entropy(w, w) == 0.0);
    CHECK(umap_cross_entropy(w, {0.3, 0.9, 0.1, 0.5}) > 0.0);
}

TEST_CASE("UMAP separates the planted two-cluster benchmark deterministically") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        auto x = two_clusters(10.0, rng);
        UmapOptions o;
        o.seed = seed;
        auto r = umap_embed(x, o);
        CHECK(r.graph.weights == r.graph.weights.transpose());
        CHECK(linearly_separable(r.embedding, 10));
        if (seed == 1) CHECK(umap_embed(x, o).embedding == r.embedding);
    }
}

TEST_CASE("embed dispatch covers all methods") {
    Rng rng(10);
    auto x = two_clusters(6.0, rng, 12, 20);
    auto labels = cluster_labels(12);
    ProjectionOptions o;
    for (auto m : kAllMethods) {
        auto e = embed(x, labels, m, 2, o);
        CHECK(e.values.rows() == 24);
        CHECK(e.values.cols() == 3);
        CHECK(e.values.allFinite());
        CHECK(e.metadata.count("n_features") == 1);
        CHECK(embed(x, labels, m, 2, o).values == e.values);
    }
    CHECK(parse_method("umap") == Method::UMAP);
    CHECK_THROWS_AS(parse_method("lda"), ConfigError);
}

TEST_CASE("bootstrap dispersion") {
    Rng rng(12);
    auto labels = cluster_labels(10);
    ProjectionOptions o;
    auto x = two_clusters(4.0, rng);

    auto one = bootstrap_embeddings(x, labels, Method::PCA, 1, 3, o);
    CHECK(one.degenerate);
    CHECK(one.dispersion.cwiseAbs().maxCoeff() == 0.0);

    auto flat = bootstrap_embeddings(Eigen::MatrixXd::Constant(20, 5, 0.3), labels, Method::PCA, 20, 3, o);
    CHECK(flat.dispersion.cwiseAbs().maxCoeff() == 0.0);
    auto flat_tsne = bootstrap_embeddings(Eigen::MatrixXd::Constant(20, 5, 0.3), labels, Method::TSNE, 5, 3, o);
    CHECK(flat_tsne.dispersion.cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(bootstrap_embeddings(x.topRows(9), std::vector<ClassLabel>(9), Method::PCA, 5, 1, o), ConfigError);

    // doubling the cluster separation lowers the median dispersion
    for (auto m : {Method::PCA, Method::TSNE}) {
        Rng r1(13), r2(13);
        auto near = bootstrap_embeddings(two_clusters(3.0, r1), labels, m, 40, 5, o);
        auto far = bootstrap_embeddings(two_clusters(6.0, r2), labels, m, 40, 5, o);
        INFO(method_name(m) << " near " << near.median_dispersion << " far " << far.median_dispersion);
        CHECK(far.median_dispersion < near.median_dispersion);
        CHECK(near.resamples == 40);
    }
}

TEST_CASE("embedding csv round trip") {
    Rng rng(14);
    EmbeddingMatrix e{Method::UMAP, 3, random_matrix(4, 3, rng), {"a", "b", "c", "d"}, {{"seed", "1"}}, {}};
    EmbeddingMatrix f{Method::PCA, 1, random_matrix(4, 3, rng), {"a", "b", "c", "d"}, {}, {}};
    auto path = std::filesystem::temp_directory_path() / "latentscope_emb.csv";
    write_embeddings_csv({e, f}, path, {"config_hash=00"});
    auto back = read_embeddings_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].method == Method::UMAP);
    CHECK(back[0].layer == 3);
    CHECK(back[0].values == e.values);
    CHECK(back[1].subject_ids == f.subject_ids);
    CHECK(back[1].values == f.values);
}
