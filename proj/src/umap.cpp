#include "latentscope/error.hpp"
#include "latentscope/projection.hpp"
#include "latentscope/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace latentscope {

double umap_target_curve(double x, double spread, double min_dist) {
    return x < min_dist ? 1.0 : std::exp(-(x - min_dist) / spread);
}

CurveParams find_ab(double spread, double min_dist) {
    if (!(spread > 0.0) || min_dist < 0.0) {
        throw ConfigError("UMAP needs spread > 0 and min_dist >= 0");
    }
    constexpr int kPoints = 300;
    std::vector<double> xs(kPoints), ys(kPoints);
    for (int i = 0; i < kPoints; ++i) {
        xs[static_cast<std::size_t>(i)] = 3.0 * spread * i / (kPoints - 1);
        ys[static_cast<std::size_t>(i)] = umap_target_curve(xs[static_cast<std::size_t>(i)], spread, min_dist);
    }
    auto residuals = [&](double a, double b, Eigen::VectorXd* r, Eigen::MatrixXd* jac) {
        double sse = 0.0;
        for (int i = 0; i < kPoints; ++i) {
            const double x = xs[static_cast<std::size_t>(i)];
            const double x2b = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
            const double den = 1.0 + a * x2b;
            const double e = 1.0 / den - ys[static_cast<std::size_t>(i)];
            sse += e * e;
            if (r != nullptr) (*r)(i) = e;
            if (jac != nullptr) {
                (*jac)(i, 0) = -x2b / (den * den);
                (*jac)(i, 1) = x > 0.0 ? -a * x2b * 2.0 * std::log(x) / (den * den) : 0.0;
            }
        }
        return sse;
    };
    // Levenberg-Marquardt from (1, 1).
    double a = 1.0, b = 1.0, lambda = 1e-3;
    Eigen::VectorXd r(kPoints);
    Eigen::MatrixXd jac(kPoints, 2);
    double sse = residuals(a, b, &r, &jac);
    for (int it = 0; it < 500; ++it) {
        const Eigen::Matrix2d jtj = jac.transpose() * jac;
        const Eigen::Vector2d jtr = jac.transpose() * r;
        Eigen::Matrix2d damped = jtj;
        damped.diagonal() += lambda * jtj.diagonal();
        const Eigen::Vector2d step = damped.ldlt().solve(-jtr);
        const double na = a + step(0), nb = b + step(1);
        if (na > 0.0 && nb > 0.0) {
            const double nsse = residuals(na, nb, nullptr, nullptr);
            if (nsse < sse) {
                const bool converged = sse - nsse < 1e-15 * std::max(1.0, sse) && step.norm() < 1e-10;
                a = na;
                b = nb;
                sse = residuals(a, b, &r, &jac);
                lambda = std::max(lambda * 0.3, 1e-12);
                if (converged) break;
                continue;
            }
        }
        lambda *= 10.0;
        if (lambda > 1e12) break;
    }
    return {a, b};
}

UmapGraph umap_graph(const Eigen::MatrixXd& d2, std::size_t n_neighbors) {
    const auto n = static_cast<std::size_t>(d2.rows());
    if (n_neighbors < 2) {
        throw ConfigError("UMAP n_neighbors must be at least 2");
    }
    if (n <= n_neighbors) {
        throw ConfigError("UMAP needs more points (" + std::to_string(n) + ") than n_neighbors (" +
                          std::to_string(n_neighbors) + ")");
    }
    const std::size_t k = n_neighbors - 1;  // neighbor count excludes the point itself
    const double target = std::log2(static_cast<double>(n_neighbors));
    UmapGraph g;
    g.rho.assign(n, 0.0);
    g.sigma.assign(n, 1.0);
    Eigen::MatrixXd directed = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

    double mean_all = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            mean_all += std::sqrt(d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    mean_all /= static_cast<double>(n * n);

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        order.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) order.push_back(j);
        }
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              const double da = d2(ii, static_cast<Eigen::Index>(a));
                              const double db = d2(ii, static_cast<Eigen::Index>(b));
                              return da != db ? da < db : a < b;
                          });
        std::vector<double> dist(k);
        for (std::size_t m = 0; m < k; ++m) dist[m] = std::sqrt(d2(ii, static_cast<Eigen::Index>(order[m])));
        double rho = 0.0;
        for (double d : dist) {
            if (d > 0.0) {
                rho = d;
                break;
            }
        }
        double lo = 0.0, hi = std::numeric_limits<double>::infinity(), sigma = 1.0;
        for (int it = 0; it < 64; ++it) {
            double psum = 0.0;
            for (double d : dist) {
                const double e = d - rho;
                psum += e > 0.0 ? std::exp(-e / sigma) : 1.0;
            }
            if (std::abs(psum - target) < 1e-5) break;
            if (psum > target) {
                hi = sigma;
                sigma = 0.5 * (lo + hi);
            } else {
                lo = sigma;
                sigma = std::isinf(hi) ? sigma * 2.0 : 0.5 * (lo + hi);
            }
        }
        const double mean_d = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(k);
        sigma = std::max(sigma, 1e-3 * (rho > 0.0 ? mean_d : mean_all));
        g.rho[i] = rho;
        g.sigma[i] = sigma;
        for (std::size_t m = 0; m < k; ++m) {
            const double e = dist[m] - rho;
            directed(ii, static_cast<Eigen::Index>(order[m])) = (e <= 0.0 || sigma == 0.0) ? 1.0 : std::exp(-e / sigma);
        }
    }

    g.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        for (Eigen::Index j = i + 1; j < static_cast<Eigen::Index>(n); ++j) {
            const double a = directed(i, j), b = directed(j, i);
            const double w = a + b * (1.0 - a);  // a + b - ab, exact when a == 1
            g.weights(i, j) = w;
            g.weights(j, i) = w;
        }
    }

    std::vector<std::size_t> comp(n, n);
    g.components = 0;
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] != n) continue;
        std::vector<std::size_t> stack{s};
        comp[s] = g.components;
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            for (std::size_t v = 0; v < n; ++v) {
                if (comp[v] == n && g.weights(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) > 0.0) {
                    comp[v] = g.components;
                    stack.push_back(v);
                }
            }
        }
        ++g.components;
    }
    return g;
}

double umap_cross_entropy(const std::vector<double>& w, const std::vector<double>& w_hat) {
    if (w.size() != w_hat.size()) {
        throw ShapeError("cross-entropy operands differ in length");
    }
    double c = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] > 0.0) c += w[i] * std::log(w[i] / w_hat[i]);
        if (w[i] < 1.0) c += (1.0 - w[i]) * std::log((1.0 - w[i]) / (1.0 - w_hat[i]));
    }
    return c;
}

namespace {

double clip4(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

UmapResult umap_from_distances(const Eigen::MatrixXd& d2, const UmapOptions& options) {
    const Eigen::Index n = d2.rows();
    const auto nd = static_cast<Eigen::Index>(options.dims);
    UmapResult result;
    result.ab = find_ab(options.spread, options.min_dist);
    result.embedding = Eigen::MatrixXd::Zero(n, nd);
    std::size_t k = options.n_neighbors;
    if (static_cast<std::size_t>(n) <= k) {
        if (n < 3) throw ConfigError("UMAP needs at least 3 points");
        k = static_cast<std::size_t>(n) - 1;
        result.warnings.push_back("n_neighbors lowered to " + std::to_string(k) + " for n=" + std::to_string(n));
    }
    if (d2.maxCoeff() <= 0.0) {
        result.warnings.push_back("all points identical; embedding set to zero");
        return result;
    }
    result.graph = umap_graph(d2, k);
    if (result.graph.components > 1) {
        result.warnings.push_back("kNN graph has " + std::to_string(result.graph.components) + " components");
    }
    const auto& w = result.graph.weights;

    // Initial layout: classical scaling of the distances (PCA of the standardized data), max |coord| = 10.
    const Eigen::MatrixXd centering =
        Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    Eigen::MatrixXd y = pca_scores_from_gram(-0.5 * centering * d2 * centering, options.dims);
    const double max_abs = y.cwiseAbs().maxCoeff();
    if (max_abs > 0.0) y *= 10.0 / max_abs;
    Rng rng(options.seed);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index d = 0; d < nd; ++d) y(i, d) += 1e-4 * standard_normal(rng);

    struct Edge {
        Eigen::Index head, tail;
        double epochs_per_sample;
    };
    const double w_max = w.maxCoeff();
    const double epochs = static_cast<double>(options.epochs);
    std::vector<Edge> edges;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j && w(i, j) > 0.0 && w(i, j) >= w_max / epochs) edges.push_back({i, j, w_max / w(i, j)});
        }
    }
    const double neg_rate = static_cast<double>(options.negative_sample_rate);
    std::vector<double> next_sample(edges.size()), per_negative(edges.size()), next_negative(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        next_sample[e] = edges[e].epochs_per_sample;
        per_negative[e] = edges[e].epochs_per_sample / neg_rate;
        next_negative[e] = per_negative[e];
    }
    const double a = result.ab.a, b = result.ab.b;
    double alpha = options.learning_rate;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const double now = static_cast<double>(epoch);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (next_sample[e] > now) continue;
            const auto j = edges[e].head, kk = edges[e].tail;
            double dist2 = (y.row(j) - y.row(kk)).squaredNorm();
            double coef = 0.0;
            if (dist2 > 0.0) {
                coef = -2.0 * a * b * std::pow(dist2, b - 1.0) / (a * std::pow(dist2, b) + 1.0);
            }
            for (Eigen::Index d = 0; d < nd; ++d) {
                const double g = clip4(coef * (y(j, d) - y(kk, d)));
                y(j, d) += g * alpha;
                y(kk, d) -= g * alpha;
            }
            next_sample[e] += edges[e].epochs_per_sample;

            const auto n_neg = static_cast<std::size_t>((now - next_negative[e]) / per_negative[e]);
            for (std::size_t s = 0; s < n_neg; ++s) {
                const auto other = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
                dist2 = (y.row(j) - y.row(other)).squaredNorm();
                if (dist2 > 0.0) {
                    coef = 2.0 * b / ((0.001 + dist2) * (a * std::pow(dist2, b) + 1.0));
                } else if (other == j) {
                    continue;
                } else {
                    coef = 0.0;
                }
                for (Eigen::Index d = 0; d < nd; ++d) {
                    const double g = coef > 0.0 ? clip4(coef * (y(j, d) - y(other, d))) : 4.0;
                    y(j, d) += g * alpha;
                }
            }
            next_negative[e] += static_cast<double>(n_neg) * per_negative[e];
        }
        alpha = options.learning_rate * (1.0 - (now + 1.0) / epochs);
    }
    if (!y.allFinite()) {
        throw NumericError("UMAP layout became non-finite");
    }
    result.embedding = y;
    return result;
}

UmapResult umap_embed(const Eigen::MatrixXd& x, const UmapOptions& options) {
    return umap_from_distances(squared_distances(standardize(x)), options);
}

}  // namespace latentscope
