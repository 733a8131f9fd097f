#include "latentscope/error.hpp"
#include "latentscope/projection.hpp"
#include "latentscope/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentscope {

std::vector<double> conditional_row(const Eigen::MatrixXd& d2, std::size_t i, double beta, double* entropy_bits) {
    const auto n = static_cast<std::size_t>(d2.rows());
    const auto ii = static_cast<Eigen::Index>(i);
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        if (j != i) dmin = std::min(dmin, d2(ii, static_cast<Eigen::Index>(j)));
    }
    std::vector<double> p(n, 0.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        p[j] = std::exp(-beta * (d2(ii, static_cast<Eigen::Index>(j)) - dmin));
        sum += p[j];
    }
    double h = 0.0;
    for (auto& v : p) {
        v /= sum;
        if (v > 0.0) h -= v * std::log2(v);
    }
    if (entropy_bits != nullptr) *entropy_bits = h;
    return p;
}

double perplexity_of(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log2(v);
    }
    return std::exp2(h);
}

double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            if (p(i, j) > 0.0) kl += p(i, j) * std::log(p(i, j) / q(i, j));
        }
    }
    return kl;
}

namespace {

// Precision bisection so that 2^H of row i hits the target perplexity.
std::vector<double> calibrated_row(const Eigen::MatrixXd& d2, std::size_t i, double perplexity, double* achieved) {
    const auto n = static_cast<std::size_t>(d2.rows());
    double mean_d = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean_d += d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    mean_d /= static_cast<double>(n - 1);
    double beta = mean_d > 0.0 ? 1.0 / mean_d : 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    std::vector<double> row;
    double perp = 0.0;
    for (int it = 0; it < 1000; ++it) {
        double h = 0.0;
        row = conditional_row(d2, i, beta, &h);
        perp = std::exp2(h);
        if (std::abs(perp - perplexity) < 1e-6) break;
        if (perp > perplexity) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    *achieved = perp;
    return row;
}

}  // namespace

TsneResult tsne_from_distances(const Eigen::MatrixXd& d2_in, const TsneOptions& options) {
    const Eigen::Index n = d2_in.rows();
    const auto nd = static_cast<Eigen::Index>(options.dims);
    if (n < 2 || d2_in.cols() != n) {
        throw ConfigError("t-SNE needs a square distance matrix with at least 2 points");
    }
    TsneResult result;
    result.embedding = Eigen::MatrixXd::Zero(n, nd);
    result.perplexity_used = options.perplexity;
    if (static_cast<double>(n) <= 3.0 * options.perplexity) {
        result.perplexity_used = std::max(1.0, std::floor(static_cast<double>(n - 1) / 3.0));
        result.warnings.push_back("perplexity lowered from " + std::to_string(options.perplexity) + " to " +
                                  std::to_string(result.perplexity_used) + " for n=" + std::to_string(n));
    }
    if (d2_in.maxCoeff() <= 0.0) {
        result.warnings.push_back("all points identical; embedding set to zero");
        result.p = Eigen::MatrixXd::Zero(n, n);
        result.perplexities.assign(static_cast<std::size_t>(n), 0.0);
        return result;
    }
    Eigen::MatrixXd d2 = d2_in;
    bool jittered = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j && d2(i, j) <= 0.0) {
                d2(i, j) = 1e-20;  // duplicate points: a 1e-10 offset
                jittered = true;
            }
        }
    }
    if (jittered) result.warnings.push_back("duplicate points jittered by 1e-10");

    Eigen::MatrixXd cond(n, n);
    result.perplexities.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = calibrated_row(d2, static_cast<std::size_t>(i), result.perplexity_used,
                                  &result.perplexities[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j) cond(i, j) = row[static_cast<std::size_t>(j)];
    }
    const Eigen::MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
    result.p = p;

    Rng rng(options.seed);
    Eigen::MatrixXd y(n, nd);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index d = 0; d < nd; ++d) y(i, d) = 1e-4 * standard_normal(rng);
    }
    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, nd);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, nd);
    Eigen::MatrixXd num(n, n);
    Eigen::MatrixXd grad(n, nd);
    result.kl_history.reserve(options.iterations);

    for (std::size_t it = 0; it < options.iterations; ++it) {
        const double exag = it < options.exaggeration_iters ? options.exaggeration : 1.0;
        const double momentum = it < options.momentum_switch ? options.momentum_initial : options.momentum_final;
        double z = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            num(i, i) = 0.0;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
                num(i, j) = num(j, i) = v;
                z += 2.0 * v;
            }
        }
        double kl = 0.0;
        grad.setZero();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = num(i, j) / z;
                if (p(i, j) > 0.0) kl += p(i, j) * std::log(p(i, j) / q);
                const double coef = 4.0 * (exag * p(i, j) - q) * num(i, j);
                grad.row(i) += coef * (y.row(i) - y.row(j));
            }
        }
        result.kl_history.push_back(kl);
        if (!grad.allFinite()) {
            throw NumericError("t-SNE gradient became non-finite at iteration " + std::to_string(it));
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index d = 0; d < nd; ++d) {
                const bool same = (grad(i, d) > 0.0) == (update(i, d) > 0.0);
                gains(i, d) = same ? std::max(0.01, gains(i, d) * 0.8) : gains(i, d) + 0.2;
                update(i, d) = momentum * update(i, d) - options.learning_rate * gains(i, d) * grad(i, d);
            }
        }
        y += update;
        y = center_columns(y);
    }
    result.embedding = y;
    return result;
}

TsneResult tsne_embed(const Eigen::MatrixXd& x, const TsneOptions& options) {
    return tsne_from_distances(squared_distances(standardize(x)), options);
}

}  // namespace latentscope
