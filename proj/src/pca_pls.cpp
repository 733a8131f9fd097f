#include "latentscope/error.hpp"
#include "latentscope/projection.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace latentscope {

namespace {

// Flip each column so its largest-magnitude entry is positive (first index wins ties).
void fix_signs(Eigen::MatrixXd& columns, Eigen::MatrixXd* follow = nullptr) {
    for (Eigen::Index c = 0; c < columns.cols(); ++c) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index r = 0; r < columns.rows(); ++r) {
            if (std::abs(columns(r, c)) > best) {
                best = std::abs(columns(r, c));
                arg = r;
            }
        }
        if (best > 0.0 && columns(arg, c) < 0.0) {
            columns.col(c) *= -1.0;
            if (follow != nullptr) follow->col(c) *= -1.0;
        }
    }
}

constexpr double kRankTolerance = 1e-12;

}  // namespace

Eigen::MatrixXd center_columns(const Eigen::MatrixXd& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    return x.rowwise() - mean;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd z = center_columns(x);
    const double n = static_cast<double>(x.rows());
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double sd = std::sqrt(z.col(c).squaredNorm() / n);
        if (sd < 1e-12) {
            z.col(c).setZero();
        } else {
            z.col(c) /= sd;
        }
    }
    return z;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows();
    const Eigen::MatrixXd gram = x * x.transpose();
    Eigen::MatrixXd d2(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d2(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double v = gram(i, i) + gram(j, j) - 2.0 * gram(i, j);
            if (v < 1e-9 * (gram(i, i) + gram(j, j))) {
                v = (x.row(i) - x.row(j)).squaredNorm();  // exact path when cancellation dominates
            }
            d2(i, j) = d2(j, i) = std::max(0.0, v);
        }
    }
    return d2;
}

PcaResult pca_fit_transform(const Eigen::MatrixXd& x, std::size_t k) {
    const Eigen::Index n = x.rows();
    const Eigen::Index p = x.cols();
    if (n < 2) {
        throw ConfigError("PCA needs at least 2 rows");
    }
    const auto kk = static_cast<Eigen::Index>(k);
    PcaResult result;
    auto& m = result.model;
    m.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd xc = x.rowwise() - m.mean.transpose();
    m.axes = Eigen::MatrixXd::Zero(p, kk);
    m.eigenvalues = Eigen::VectorXd::Zero(kk);
    const double denom = static_cast<double>(n - 1);

    if (p <= n) {
        const Eigen::MatrixXd cov = xc.transpose() * xc / denom;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        const double top = std::max(eig.eigenvalues()(p - 1), 0.0);
        for (Eigen::Index c = 0; c < kk; ++c) {
            if (c >= p) {
                m.rank_deficient = true;
                continue;
            }
            const double lambda = std::max(eig.eigenvalues()(p - 1 - c), 0.0);
            m.eigenvalues(c) = lambda;
            m.axes.col(c) = eig.eigenvectors().col(p - 1 - c);
            if (lambda <= kRankTolerance * std::max(top, 1.0)) m.rank_deficient = true;
        }
    } else {
        const Eigen::MatrixXd gram = xc * xc.transpose() / denom;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        const double top = std::max(eig.eigenvalues()(n - 1), 0.0);
        for (Eigen::Index c = 0; c < kk; ++c) {
            const double lambda = c < n ? std::max(eig.eigenvalues()(n - 1 - c), 0.0) : 0.0;
            if (c >= n || lambda <= kRankTolerance * std::max(top, 1.0)) {
                m.rank_deficient = true;
                continue;
            }
            m.eigenvalues(c) = lambda;
            m.axes.col(c) = xc.transpose() * eig.eigenvectors().col(n - 1 - c) / std::sqrt(denom * lambda);
            m.axes.col(c).normalize();
        }
    }
    fix_signs(m.axes);
    result.scores = xc * m.axes;
    return result;
}

Eigen::MatrixXd pca_scores_from_gram(const Eigen::MatrixXd& centered_gram, std::size_t k) {
    const Eigen::Index n = centered_gram.rows();
    const auto kk = static_cast<Eigen::Index>(k);
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(n, kk);
    if (n == 0) return scores;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered_gram);
    const double top = std::max(eig.eigenvalues()(n - 1), 0.0);
    for (Eigen::Index c = 0; c < kk && c < n; ++c) {
        const double lambda = eig.eigenvalues()(n - 1 - c);
        if (lambda <= kRankTolerance * std::max(top, 1.0)) continue;
        scores.col(c) = eig.eigenvectors().col(n - 1 - c) * std::sqrt(lambda);
    }
    fix_signs(scores);
    return scores;
}

Eigen::MatrixXd one_hot(const std::vector<ClassLabel>& labels) {
    std::vector<ClassLabel> present;
    for (auto c : kAllClasses) {
        if (std::find(labels.begin(), labels.end(), c) != labels.end()) present.push_back(c);
    }
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()),
                                              static_cast<Eigen::Index>(present.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto col = std::find(present.begin(), present.end(), labels[i]) - present.begin();
        y(static_cast<Eigen::Index>(i), col) = 1.0;
    }
    return y;
}

PlsModel pls_fit(const Eigen::MatrixXd& x_in, const Eigen::MatrixXd& y_in, std::size_t k) {
    if (x_in.rows() != y_in.rows()) {
        throw ShapeError("PLS: X and Y row counts differ");
    }
    if (x_in.rows() < 2) {
        throw ConfigError("PLS needs at least 2 rows");
    }
    Eigen::MatrixXd x = x_in;
    Eigen::MatrixXd y = center_columns(y_in);
    const double y_norm = y.norm();
    if (y_norm < 1e-12) {
        throw ConfigError("PLS: response is constant (need at least 2 classes)");
    }
    const auto kk = static_cast<Eigen::Index>(k);
    PlsModel model;
    model.weights = Eigen::MatrixXd::Zero(x.cols(), kk);
    model.scores = Eigen::MatrixXd::Zero(x.rows(), kk);
    model.x_loadings = Eigen::MatrixXd::Zero(x.cols(), kk);
    model.y_loadings = Eigen::MatrixXd::Zero(y.cols(), kk);

    double first_norm = 0.0;
    for (Eigen::Index c = 0; c < kk; ++c) {
        const Eigen::MatrixXd cross = x.transpose() * y;  // p x q
        const double cn = cross.norm();
        if (c == 0) first_norm = cn;
        if (cn <= 1e-10 * std::max(first_norm, 1e-300)) {
            model.exhausted = true;
            break;
        }
        Eigen::VectorXd w;
        if (cross.cols() == 1) {
            w = cross.col(0);
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cross.transpose() * cross);
            w = cross * eig.eigenvectors().col(cross.cols() - 1);
        }
        w.normalize();
        Eigen::MatrixXd wm = w;
        fix_signs(wm);
        w = wm.col(0);
        const Eigen::VectorXd t = x * w;
        const double tt = t.squaredNorm();
        if (tt <= 1e-300) {
            model.exhausted = true;
            break;
        }
        const Eigen::VectorXd px = x.transpose() * t / tt;
        const Eigen::VectorXd qy = y.transpose() * t / tt;
        x -= t * px.transpose();
        y -= t * qy.transpose();
        model.weights.col(c) = w;
        model.scores.col(c) = t;
        model.x_loadings.col(c) = px;
        model.y_loadings.col(c) = qy;
    }
    return model;
}

}  // namespace latentscope
