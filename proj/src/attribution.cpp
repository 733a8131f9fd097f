#include "latentscope/attribution.hpp"

#include "latentscope/error.hpp"
#include "latentscope/hash.hpp"
#include "latentscope/rng.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latentscope {

double sum_squared_error(const Volume& reconstruction, const Volume& target) {
    if (reconstruction.dims() != target.dims()) {
        throw ShapeError("reconstruction dims " + to_string(reconstruction.dims()) + " differ from target " +
                         to_string(target.dims()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = static_cast<double>(reconstruction[i]) - static_cast<double>(target[i]);
        s += d * d;
    }
    return s;
}

std::vector<double> total_reconstruction_error(const Cohort& cohort, const AEParams& params) {
    std::vector<double> errors;
    errors.reserve(cohort.size());
    for (const auto& s : cohort.subjects) {
        const auto result = forward(s.volume, params, Mode::Eval);
        errors.push_back(sum_squared_error(result.reconstruction, s.volume));
    }
    return errors;
}

double DecisionTree::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
    }
    return nodes[i].value;
}

std::size_t DecisionTree::depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        best = std::max(best, d[i]);
        if (nodes[i].feature >= 0) {
            d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
            d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
        }
    }
    return best;
}

double ForestModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return s / static_cast<double>(trees.size());
}

std::uint64_t ForestModel::hash() const {
    Fnv1a h;
    h.add(static_cast<std::uint64_t>(feature_count));
    for (const auto& t : trees) {
        h.add(static_cast<std::uint64_t>(t.nodes.size()));
        for (const auto& n : t.nodes) {
            h.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(n.feature)));
            h.add(n.threshold);
            h.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(n.left)));
            h.add(static_cast<std::uint64_t>(static_cast<std::int64_t>(n.right)));
            h.add(n.value);
        }
    }
    return h.value();
}

namespace {

struct TreeBuilder {
    const Eigen::MatrixXd& x;
    const std::vector<double>& y;
    const ForestConfig& config;
    std::size_t max_features;
    Rng& rng;
    DecisionTree tree;
    std::vector<std::size_t> features;

    int build(std::vector<std::size_t>& idx, std::size_t depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const double n = static_cast<double>(idx.size());
        double sum = 0.0;
        for (auto i : idx) sum += y[i];
        const double mean = sum / n;
        double sse = 0.0;
        for (auto i : idx) sse += (y[i] - mean) * (y[i] - mean);
        tree.nodes[static_cast<std::size_t>(id)].value = mean;
        if (depth >= config.max_depth || idx.size() < 2 * config.min_leaf ||
            sse <= 1e-24 * n * std::max(1.0, mean * mean)) {
            return id;
        }

        // partial Fisher-Yates draw of the candidate features
        const std::size_t p = features.size();
        for (std::size_t k = 0; k < max_features; ++k) {
            std::swap(features[k], features[k + uniform_index(rng, p - k)]);
        }
        int best_feature = -1;
        double best_gain = 1e-12 * sse;
        double best_threshold = 0.0;
        std::vector<std::size_t> order(idx);
        for (std::size_t k = 0; k < max_features; ++k) {
            const auto f = static_cast<Eigen::Index>(features[k]);
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return x(static_cast<Eigen::Index>(a), f) < x(static_cast<Eigen::Index>(b), f);
            });
            double left = 0.0;
            for (std::size_t m = 1; m < order.size(); ++m) {
                left += y[order[m - 1]];
                if (m < config.min_leaf || order.size() - m < config.min_leaf) continue;
                const double lo = x(static_cast<Eigen::Index>(order[m - 1]), f);
                const double hi = x(static_cast<Eigen::Index>(order[m]), f);
                if (!(lo < hi)) continue;
                const double nl = static_cast<double>(m);
                const double nr = n - nl;
                const double right = sum - left;
                const double gain = left * left / nl + right * right / nr - sum * sum / n;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (lo + hi);
                    if (!(best_threshold < hi)) best_threshold = lo;
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> li, ri;
        for (auto i : idx) {
            (x(static_cast<Eigen::Index>(i), best_feature) <= best_threshold ? li : ri).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();
        const int l = build(li, depth + 1);
        const int r = build(ri, depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return id;
    }
};

}  // namespace

ForestModel rf_fit(const Eigen::MatrixXd& x, const std::vector<double>& y, const ForestConfig& config) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (n != y.size()) {
        throw ConfigError("forest: " + std::to_string(n) + " rows but " + std::to_string(y.size()) + " targets");
    }
    if (n < 5) {
        throw ConfigError("forest needs at least 5 samples, got " + std::to_string(n));
    }
    if (x.cols() < 1 || config.n_trees == 0 || config.min_leaf == 0) {
        throw ConfigError("forest needs at least one feature, one tree and min_leaf >= 1");
    }
    if (!x.allFinite() || !std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); })) {
        throw NumericError("forest inputs contain non-finite values");
    }
    const auto p = static_cast<std::size_t>(x.cols());
    ForestModel model;
    model.config = config;
    model.feature_count = p;
    const std::size_t max_features =
        config.max_features == 0 ? (p + 2) / 3 : std::min(config.max_features, p);
    model.trees.reserve(config.n_trees);
    for (std::size_t t = 0; t < config.n_trees; ++t) {
        Rng rng(derive_seed(config.seed, t));
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = uniform_index(rng, n);
        TreeBuilder b{x, y, config, max_features, rng, {}, std::vector<std::size_t>(p)};
        std::iota(b.features.begin(), b.features.end(), std::size_t{0});
        b.build(idx, 0);
        model.trees.push_back(std::move(b.tree));
    }
    return model;
}

namespace {

// Shapley weight of a leaf term for one player on the side with `own` members, `other` on the other side.
double leaf_weight(std::size_t own, std::size_t other) {
    // (own - 1)! other! / (own + other)!
    double w = 1.0 / static_cast<double>(own + other);
    for (std::size_t k = 1; k <= other; ++k) {
        w *= static_cast<double>(k) / static_cast<double>(own - 1 + k);
    }
    return w;
}

struct PairShap {
    const DecisionTree& tree;
    const Eigen::Ref<const Eigen::VectorXd>& x;
    const Eigen::Ref<const Eigen::VectorXd>& z;
    std::vector<std::uint8_t> side;  // 0 unset, 1 takes x, 2 takes z
    std::vector<int> from_x, from_z;
    Eigen::VectorXd phi;

    void visit(std::size_t node) {
        const auto& n = tree.nodes[node];
        if (n.feature < 0) {
            if (!from_x.empty()) {
                const double w = n.value * leaf_weight(from_x.size(), from_z.size());
                for (int f : from_x) phi(f) += w;
            }
            if (!from_z.empty()) {
                const double w = n.value * leaf_weight(from_z.size(), from_x.size());
                for (int f : from_z) phi(f) -= w;
            }
            return;
        }
        const auto f = static_cast<std::size_t>(n.feature);
        const auto x_child = static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
        const auto z_child = static_cast<std::size_t>(z(n.feature) <= n.threshold ? n.left : n.right);
        if (side[f] == 1) {
            visit(x_child);
        } else if (side[f] == 2) {
            visit(z_child);
        } else if (x_child == z_child) {
            visit(x_child);
        } else {
            side[f] = 1;
            from_x.push_back(n.feature);
            visit(x_child);
            from_x.pop_back();
            side[f] = 2;
            from_z.push_back(n.feature);
            visit(z_child);
            from_z.pop_back();
            side[f] = 0;
        }
    }
};

}  // namespace

Eigen::VectorXd tree_shap_pair(const DecisionTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& z) {
    PairShap s{tree, x, z, std::vector<std::uint8_t>(static_cast<std::size_t>(x.size()), 0), {}, {},
               Eigen::VectorXd::Zero(x.size())};
    s.visit(0);
    return s.phi;
}

ShapExplanation tree_shap(const ForestModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::MatrixXd& background) {
    if (background.rows() == 0) {
        throw ConfigError("SHAP needs a non-empty background set");
    }
    if (x.size() != static_cast<Eigen::Index>(model.feature_count) || background.cols() != x.size()) {
        throw ShapeError("SHAP input length does not match the forest's feature count");
    }
    ShapExplanation e;
    e.phi = Eigen::VectorXd::Zero(x.size());
    for (Eigen::Index b = 0; b < background.rows(); ++b) {
        const Eigen::VectorXd z = background.row(b).transpose();
        for (const auto& t : model.trees) e.phi += tree_shap_pair(t, x, z);
        e.base += model.predict(z);
    }
    const double scale = static_cast<double>(background.rows()) * static_cast<double>(model.trees.size());
    e.phi /= scale;
    e.base /= static_cast<double>(background.rows());
    e.prediction = model.predict(x);
    return e;
}

RegionImportance shap_region_importance(const Eigen::MatrixXd& phi) {
    if (phi.rows() == 0) {
        throw ConfigError("region importance needs at least one subject");
    }
    RegionImportance r;
    r.mean_abs = phi.cwiseAbs().colwise().mean().transpose();
    const double lo = r.mean_abs.minCoeff();
    const double hi = r.mean_abs.maxCoeff();
    r.degenerate = hi == lo;
    r.normalized = (r.mean_abs.array() - lo) / (hi - lo + kImportanceEpsilon);
    return r;
}

ShapResult explain_class(const Eigen::MatrixXd& profiles, const std::vector<double>& targets,
                         const std::vector<std::string>& subject_ids, const std::vector<int>& region_ids,
                         ClassLabel label, const ForestConfig& config) {
    if (subject_ids.size() != static_cast<std::size_t>(profiles.rows()) ||
        region_ids.size() != static_cast<std::size_t>(profiles.cols())) {
        throw ShapeError("SHAP: ids do not match the profile matrix");
    }
    const ForestModel forest = rf_fit(profiles, targets, config);
    ShapResult r;
    r.label = label;
    r.subject_ids = subject_ids;
    r.region_ids = region_ids;
    r.forest_hash = forest.hash();
    r.phi.resize(profiles.rows(), profiles.cols());
    r.predictions.resize(profiles.rows());
    for (Eigen::Index i = 0; i < profiles.rows(); ++i) {
        const auto e = tree_shap(forest, profiles.row(i).transpose(), profiles);
        r.phi.row(i) = e.phi.transpose();
        r.predictions(i) = e.prediction;
        r.base = e.base;
        r.max_local_accuracy_error =
            std::max(r.max_local_accuracy_error, std::abs(e.base + e.phi.sum() - e.prediction));
    }
    r.importance = shap_region_importance(r.phi);
    return r;
}

Volume build_shap_volume(const Eigen::VectorXd& normalized, const AtlasMap& atlas, const std::optional<Volume>& mask) {
    if (normalized.size() != static_cast<Eigen::Index>(atlas.region_count())) {
        throw ShapeError("importance has " + std::to_string(normalized.size()) + " entries but the atlas has " +
                         std::to_string(atlas.region_count()) + " regions");
    }
    if (mask && mask->dims() != atlas.dims()) {
        throw ShapeError("mask dims " + to_string(mask->dims()) + " differ from atlas " + to_string(atlas.dims()));
    }
    Volume out(atlas.dims());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto r = atlas[i];
        if (r == 0) continue;
        double v = normalized(static_cast<Eigen::Index>(r - 1));
        if (mask) v *= (*mask)[i];
        out[i] = static_cast<float>(v);
    }
    return out;
}

void write_shap_csv(const std::vector<ShapResult>& results, const std::filesystem::path& path,
                    const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "class,subject_id,region,phi\n";
    for (const auto& r : results) {
        for (Eigen::Index i = 0; i < r.phi.rows(); ++i) {
            for (Eigen::Index j = 0; j < r.phi.cols(); ++j) {
                out << class_name(r.label) << ',' << r.subject_ids[static_cast<std::size_t>(i)] << ','
                    << r.region_ids[static_cast<std::size_t>(j)] << ',' << text::num(r.phi(i, j)) << '\n';
            }
        }
    }
}

void write_importance_csv(const std::vector<ShapResult>& results, const std::filesystem::path& path,
                          const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "class,region,s_r,s_tilde\n";
    for (const auto& r : results) {
        for (Eigen::Index j = 0; j < r.importance.mean_abs.size(); ++j) {
            out << class_name(r.label) << ',' << r.region_ids[static_cast<std::size_t>(j)] << ','
                << text::num(r.importance.mean_abs(j)) << ',' << text::num(r.importance.normalized(j)) << '\n';
        }
    }
}

}  // namespace latentscope
