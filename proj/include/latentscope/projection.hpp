#pragma once

#include "latentscope/volume.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace latentscope {

enum class Method : std::uint8_t { PCA = 0, PLS = 1, TSNE = 2, UMAP = 3 };

inline constexpr std::array<Method, 4> kAllMethods = {Method::PCA, Method::PLS, Method::TSNE, Method::UMAP};
inline constexpr std::size_t kComponents = 3;

std::string_view method_name(Method m);
Method parse_method(std::string_view text);

/// n_subjects x 3 projection of one activation layer. Layer is 1-based (L1..L3).
struct EmbeddingMatrix {
    Method method = Method::PCA;
    std::size_t layer = 1;
    Eigen::MatrixXd values;
    std::vector<std::string> subject_ids;
    std::map<std::string, std::string> metadata;
    std::vector<std::string> warnings;
};

/// Per-feature z-score; features with std < 1e-12 become zero.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x);
Eigen::MatrixXd center_columns(const Eigen::MatrixXd& x);
/// Exact pairwise squared Euclidean distances with a zero diagonal.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x);

struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd axes;  // p x k, orthonormal columns (zero columns when rank deficient)
    Eigen::VectorXd eigenvalues;
    bool rank_deficient = false;
};

struct PcaResult {
    PcaModel model;
    Eigen::MatrixXd scores;  // n x k
};

/// Top-k eigenpairs of the (n-1)-normalized covariance; largest-magnitude loading of each axis is positive.
PcaResult pca_fit_transform(const Eigen::MatrixXd& x, std::size_t k = kComponents);

/// Scores from a double-centered Gram matrix (n x n); the largest-magnitude score of each component is positive.
Eigen::MatrixXd pca_scores_from_gram(const Eigen::MatrixXd& centered_gram, std::size_t k = kComponents);

struct PlsModel {
    Eigen::MatrixXd weights;     // p x k, unit columns
    Eigen::MatrixXd scores;      // n x k
    Eigen::MatrixXd x_loadings;  // p x k
    Eigen::MatrixXd y_loadings;  // q x k
    bool exhausted = false;      // Y fully explained before k components
};

/// PLS2 with deflation of X and Y. X is used as given (callers standardize); Y is centered internally.
PlsModel pls_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t k = kComponents);
/// One-hot class indicator matrix (columns in kAllClasses order, absent classes dropped).
Eigen::MatrixXd one_hot(const std::vector<ClassLabel>& labels);

struct TsneOptions {
    std::size_t dims = kComponents;
    double perplexity = 30.0;
    double learning_rate = 200.0;
    std::size_t iterations = 1000;
    double exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    std::size_t momentum_switch = 250;
    std::uint64_t seed = 1;
};

struct TsneResult {
    Eigen::MatrixXd embedding;
    Eigen::MatrixXd p;                 // symmetrized joint affinities
    std::vector<double> perplexities;  // achieved per point
    std::vector<double> kl_history;    // KL(P||Q) after each iteration (exaggeration removed)
    double perplexity_used = 0.0;
    std::vector<std::string> warnings;
};

/// Conditional affinities p_{j|i} for one row of squared distances at precision beta.
std::vector<double> conditional_row(const Eigen::MatrixXd& d2, std::size_t i, double beta, double* entropy_bits);
/// Perplexity 2^H of a discrete distribution.
double perplexity_of(const std::vector<double>& p);
double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q);

TsneResult tsne_from_distances(const Eigen::MatrixXd& d2, const TsneOptions& options);
TsneResult tsne_embed(const Eigen::MatrixXd& x, const TsneOptions& options);

struct UmapOptions {
    std::size_t dims = kComponents;
    std::size_t n_neighbors = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    std::size_t epochs = 500;
    double learning_rate = 1.0;
    std::size_t negative_sample_rate = 5;
    std::uint64_t seed = 1;
};

struct CurveParams {
    double a = 0.0;
    double b = 0.0;
};

/// Least-squares fit of 1 / (1 + a x^(2b)) to the piecewise min_dist/spread target on [0, 3 spread].
CurveParams find_ab(double spread, double min_dist);
double umap_target_curve(double x, double spread, double min_dist);

struct UmapGraph {
    Eigen::MatrixXd weights;  // symmetric, entries in [0,1]
    std::vector<double> rho;
    std::vector<double> sigma;
    std::size_t components = 1;
};

UmapGraph umap_graph(const Eigen::MatrixXd& d2, std::size_t n_neighbors);
/// Fuzzy cross-entropy between high- and low-dimensional memberships.
double umap_cross_entropy(const std::vector<double>& w, const std::vector<double>& w_hat);

struct UmapResult {
    Eigen::MatrixXd embedding;
    UmapGraph graph;
    CurveParams ab;
    std::vector<std::string> warnings;
};

UmapResult umap_from_distances(const Eigen::MatrixXd& d2, const UmapOptions& options);
UmapResult umap_embed(const Eigen::MatrixXd& x, const UmapOptions& options);

struct ProjectionOptions {
    TsneOptions tsne;
    UmapOptions umap;
    std::uint64_t seed = 1;
};

/// Method dispatch: PCA centers X, PLS standardizes X against one-hot labels, t-SNE/UMAP standardize X.
EmbeddingMatrix embed(const Eigen::MatrixXd& x, const std::vector<ClassLabel>& labels, Method method,
                      std::size_t layer, const ProjectionOptions& options);

struct BootstrapSummary {
    Method method = Method::PCA;
    std::size_t resamples = 0;
    Eigen::MatrixXd dispersion;         // n x 3, std of aligned coordinates over resamples containing the subject
    std::vector<std::size_t> coverage;  // resamples containing each subject
    bool degenerate = false;            // fewer than 2 resamples: dispersion reported as 0
    double median_dispersion = 0.0;     // median over subjects of the mean component dispersion
};

/// Seeded resampling with replacement; each resample's embedding is similarity-aligned to the
/// full-data embedding (rescaled to unit RMS) before dispersions are taken.
BootstrapSummary bootstrap_embeddings(const Eigen::MatrixXd& x, const std::vector<ClassLabel>& labels, Method method,
                                      std::size_t resamples, std::uint64_t seed, const ProjectionOptions& options);

/// Rows: subject_id,method,layer,d0,d1,d2. `preamble` lines are written first, prefixed with "# ".
void write_embeddings_csv(const std::vector<EmbeddingMatrix>& embeddings, const std::filesystem::path& path,
                          const std::vector<std::string>& preamble = {});
std::vector<EmbeddingMatrix> read_embeddings_csv(const std::filesystem::path& path);
/// key=value lines, one per metadata entry, keys prefixed by method and layer.
void write_embedding_metadata(const std::vector<EmbeddingMatrix>& embeddings, const std::filesystem::path& path,
                              const std::vector<std::string>& preamble = {});

}  // namespace latentscope
