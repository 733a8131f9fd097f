#include "latentscope/projection.hpp"

#include "latentscope/error.hpp"
#include "latentscope/rng.hpp"
#include "text_util.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace latentscope {

std::string_view method_name(Method m) {
    switch (m) {
        case Method::PCA: return "pca";
        case Method::PLS: return "pls";
        case Method::TSNE: return "tsne";
        case Method::UMAP: return "umap";
    }
    return "?";
}

Method parse_method(std::string_view text) {
    for (auto m : kAllMethods) {
        if (method_name(m) == text) return m;
    }
    throw ConfigError("unknown projection method '" + std::string(text) + "'");
}

namespace {

using text::num;

Eigen::MatrixXd double_center(const Eigen::MatrixXd& m) {
    const Eigen::VectorXd row_mean = m.rowwise().mean();
    const Eigen::RowVectorXd col_mean = m.colwise().mean();
    const double all = m.mean();
    Eigen::MatrixXd out = m;
    out.colwise() -= row_mean;
    out.rowwise() -= col_mean;
    out.array() += all;
    return out;
}

Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows,
                       const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
    return out;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

// Least-squares similarity transform (rotation or reflection, scale, shift) of `moving` onto `target`.
Eigen::MatrixXd procrustes_align(const Eigen::MatrixXd& moving, const Eigen::MatrixXd& target) {
    const Eigen::RowVectorXd mu_m = moving.colwise().mean();
    const Eigen::RowVectorXd mu_t = target.colwise().mean();
    const Eigen::MatrixXd a = moving.rowwise() - mu_m;
    const Eigen::MatrixXd b = target.rowwise() - mu_t;
    const double norm_a = a.squaredNorm();
    if (norm_a <= 1e-300) {
        return Eigen::MatrixXd(target.rows(), target.cols()).rowwise() = mu_t;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.transpose() * b, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::MatrixXd rot = svd.matrixU() * svd.matrixV().transpose();
    const double scale = svd.singularValues().sum() / norm_a;
    return (scale * a * rot).rowwise() + mu_t;
}

}  // namespace

EmbeddingMatrix embed(const Eigen::MatrixXd& x, const std::vector<ClassLabel>& labels, Method method,
                      std::size_t layer, const ProjectionOptions& options) {
    if (static_cast<std::size_t>(x.rows()) != labels.size()) {
        throw ShapeError("activation rows and labels differ in count");
    }
    EmbeddingMatrix e;
    e.method = method;
    e.layer = layer;
    auto& md = e.metadata;
    md["n_subjects"] = std::to_string(x.rows());
    md["n_features"] = std::to_string(x.cols());
    switch (method) {
        case Method::PCA: {
            auto r = pca_fit_transform(x);
            e.values = r.scores;
            for (Eigen::Index c = 0; c < r.model.eigenvalues.size(); ++c) {
                md["eigenvalue_" + std::to_string(c)] = num(r.model.eigenvalues(c));
            }
            md["preprocess"] = "center";
            if (r.model.rank_deficient) e.warnings.push_back("rank deficient below 3 components");
            break;
        }
        case Method::PLS: {
            auto m = pls_fit(standardize(x), one_hot(labels));
            e.values = m.scores;
            md["preprocess"] = "standardize_x,center_y";
            md["deflation"] = "x_and_y";
            if (m.exhausted) e.warnings.push_back("response exhausted before 3 components; remaining scores zero");
            break;
        }
        case Method::TSNE: {
            auto o = options.tsne;
            auto r = tsne_embed(x, o);
            e.values = r.embedding;
            e.warnings = r.warnings;
            md["preprocess"] = "standardize";
            md["perplexity"] = num(r.perplexity_used);
            md["learning_rate"] = num(o.learning_rate);
            md["iterations"] = std::to_string(o.iterations);
            md["early_exaggeration"] = num(o.exaggeration);
            md["exaggeration_iters"] = std::to_string(o.exaggeration_iters);
            md["momentum"] = num(o.momentum_initial) + "->" + num(o.momentum_final) + "@" +
                             std::to_string(o.momentum_switch);
            md["seed"] = std::to_string(o.seed);
            if (!r.kl_history.empty()) md["final_kl"] = num(r.kl_history.back());
            break;
        }
        case Method::UMAP: {
            auto o = options.umap;
            auto r = umap_embed(x, o);
            e.values = r.embedding;
            e.warnings = r.warnings;
            md["preprocess"] = "standardize";
            md["n_neighbors"] = std::to_string(o.n_neighbors);
            md["min_dist"] = num(o.min_dist);
            md["spread"] = num(o.spread);
            md["epochs"] = std::to_string(o.epochs);
            md["negative_sample_rate"] = std::to_string(o.negative_sample_rate);
            md["a"] = num(r.ab.a);
            md["b"] = num(r.ab.b);
            md["init"] = "pca_scaled_10";
            md["seed"] = std::to_string(o.seed);
            break;
        }
    }
    if (!e.values.allFinite()) {
        throw NumericError(std::string(method_name(method)) + " produced non-finite coordinates");
    }
    for (std::size_t w = 0; w < e.warnings.size(); ++w) md["warning_" + std::to_string(w)] = e.warnings[w];
    return e;
}

BootstrapSummary bootstrap_embeddings(const Eigen::MatrixXd& x, const std::vector<ClassLabel>& labels, Method method,
                                      std::size_t resamples, std::uint64_t seed, const ProjectionOptions& options) {
    const Eigen::Index n = x.rows();
    if (n < 10) {
        throw ConfigError("bootstrap needs at least 10 subjects");
    }
    if (resamples == 0) {
        throw ConfigError("bootstrap needs at least one resample");
    }
    BootstrapSummary s;
    s.method = method;
    s.resamples = resamples;
    s.dispersion = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(kComponents));
    s.coverage.assign(static_cast<std::size_t>(n), 0);

    Eigen::MatrixXd reference = embed(x, labels, method, 0, options).values;
    reference = center_columns(reference);
    const double rms = std::sqrt(reference.squaredNorm() / static_cast<double>(n));
    if (rms > 0.0) reference /= rms;

    Eigen::MatrixXd gram, d2, xs;
    if (method == Method::PCA) {
        const Eigen::MatrixXd xc = center_columns(x);
        gram = xc * xc.transpose();
    } else if (method == Method::PLS) {
        xs = standardize(x);
    } else {
        d2 = squared_distances(standardize(x));
    }

    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, s.dispersion.cols());
    Eigen::MatrixXd sumsq = sum;
    for (std::size_t b = 0; b < resamples; ++b) {
        Rng rng(derive_seed(seed, b));
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
        for (auto& i : idx) i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
        std::vector<Eigen::Index> uniq = idx;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

        Eigen::MatrixXd coords(static_cast<Eigen::Index>(uniq.size()), static_cast<Eigen::Index>(kComponents));
        auto first_occurrence = [&](const Eigen::MatrixXd& scores) {
            for (std::size_t u = 0; u < uniq.size(); ++u) {
                const auto pos = std::find(idx.begin(), idx.end(), uniq[u]) - idx.begin();
                coords.row(static_cast<Eigen::Index>(u)) = scores.row(pos);
            }
        };
        if (method == Method::PCA) {
            first_occurrence(pca_scores_from_gram(double_center(select(gram, idx, idx))));
        } else if (method == Method::PLS) {
            std::vector<ClassLabel> sub_labels;
            for (auto i : idx) sub_labels.push_back(labels[static_cast<std::size_t>(i)]);
            const Eigen::MatrixXd y = one_hot(sub_labels);
            if (y.cols() < 2) continue;  // a single-class resample has no PLS response
            first_occurrence(pls_fit(select_rows(xs, idx), y).scores);
        } else {
            const Eigen::MatrixXd sub = select(d2, uniq, uniq);
            if (method == Method::TSNE) {
                auto o = options.tsne;
                o.seed = derive_seed(seed, 1'000'000 + b);
                coords = tsne_from_distances(sub, o).embedding;
            } else {
                auto o = options.umap;
                o.seed = derive_seed(seed, 1'000'000 + b);
                coords = umap_from_distances(sub, o).embedding;
            }
        }
        const Eigen::MatrixXd aligned = procrustes_align(coords, select_rows(reference, uniq));
        for (std::size_t u = 0; u < uniq.size(); ++u) {
            const auto i = uniq[u];
            sum.row(i) += aligned.row(static_cast<Eigen::Index>(u));
            sumsq.row(i) += aligned.row(static_cast<Eigen::Index>(u)).cwiseAbs2();
            ++s.coverage[static_cast<std::size_t>(i)];
        }
    }

    s.degenerate = resamples < 2;
    std::vector<double> per_subject;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto c = static_cast<double>(s.coverage[static_cast<std::size_t>(i)]);
        if (!s.degenerate && c >= 2.0) {
            for (Eigen::Index d = 0; d < s.dispersion.cols(); ++d) {
                const double mean = sum(i, d) / c;
                s.dispersion(i, d) = std::sqrt(std::max(0.0, sumsq(i, d) / c - mean * mean));
            }
        }
        per_subject.push_back(s.dispersion.row(i).mean());
    }
    std::sort(per_subject.begin(), per_subject.end());
    const std::size_t m = per_subject.size();
    s.median_dispersion = m % 2 == 1 ? per_subject[m / 2] : 0.5 * (per_subject[m / 2 - 1] + per_subject[m / 2]);
    return s;
}

void write_embeddings_csv(const std::vector<EmbeddingMatrix>& embeddings, const std::filesystem::path& path,
                          const std::vector<std::string>& preamble) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    for (const auto& line : preamble) out << "# " << line << '\n';
    out << "subject_id,method,layer,d0,d1,d2\n";
    for (const auto& e : embeddings) {
        if (static_cast<std::size_t>(e.values.rows()) != e.subject_ids.size() ||
            e.values.cols() != static_cast<Eigen::Index>(kComponents)) {
            throw ShapeError("embedding rows do not match subject ids");
        }
        for (Eigen::Index i = 0; i < e.values.rows(); ++i) {
            out << e.subject_ids[static_cast<std::size_t>(i)] << ',' << method_name(e.method) << ",L" << e.layer;
            for (Eigen::Index d = 0; d < e.values.cols(); ++d) out << ',' << num(e.values(i, d));
            out << '\n';
        }
    }
}

std::vector<EmbeddingMatrix> read_embeddings_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DependencyError("missing embedding file " + path.string());
    }
    std::vector<EmbeddingMatrix> out;
    std::vector<std::vector<std::array<double, kComponents>>> rows;
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "subject_id,method,layer,d0,d1,d2") {
                throw FormatError(path.string() + ": unexpected header '" + line + "'");
            }
            header = true;
            continue;
        }
        std::stringstream ss(line);
        std::string id, method, layer, v[kComponents];
        std::getline(ss, id, ',');
        std::getline(ss, method, ',');
        std::getline(ss, layer, ',');
        for (auto& f : v) std::getline(ss, f, ',');
        if (layer.size() < 2 || layer[0] != 'L' || v[kComponents - 1].empty()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
        const Method m = parse_method(method);
        const std::size_t l = std::stoul(layer.substr(1));
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.method == m && e.layer == l; });
        if (it == out.end()) {
            out.push_back({m, l, {}, {}, {}, {}});
            rows.emplace_back();
            it = out.end() - 1;
        }
        const auto k = static_cast<std::size_t>(it - out.begin());
        it->subject_ids.push_back(id);
        std::array<double, kComponents> r{};
        for (std::size_t d = 0; d < kComponents; ++d) r[d] = std::stod(v[d]);
        rows[k].push_back(r);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].values.resize(static_cast<Eigen::Index>(rows[k].size()), static_cast<Eigen::Index>(kComponents));
        for (std::size_t i = 0; i < rows[k].size(); ++i)
            for (std::size_t d = 0; d < kComponents; ++d)
                out[k].values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[k][i][d];
    }
    return out;
}

void write_embedding_metadata(const std::vector<EmbeddingMatrix>& embeddings, const std::filesystem::path& path,
                              const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    for (const auto& e : embeddings) {
        const std::string prefix = std::string(method_name(e.method)) + ".L" + std::to_string(e.layer) + ".";
        for (const auto& [k, v] : e.metadata) out << prefix << k << '=' << v << '\n';
    }
}

}  // namespace latentscope
