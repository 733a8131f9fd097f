#pragma once

#include "latentscope/autoencoder.hpp"
#include "latentscope/volume.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace latentscope {

/// Sum of squared voxel differences. Throws ShapeError on mismatched dims.
double sum_squared_error(const Volume& reconstruction, const Volume& target);

/// Eval-mode reconstruction error per subject, in cohort order.
std::vector<double> total_reconstruction_error(const Cohort& cohort, const AEParams& params);

struct ForestConfig {
    std::size_t n_trees = 100;
    std::size_t max_depth = 6;
    std::size_t min_leaf = 2;
    std::size_t max_features = 0;  // features tried per split; 0 means ceil(R / 3)
    std::uint64_t seed = 1;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // root at 0

    [[nodiscard]] double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    [[nodiscard]] std::size_t depth() const;
};

struct ForestModel {
    std::vector<DecisionTree> trees;
    ForestConfig config;
    std::size_t feature_count = 0;

    /// Mean of the tree predictions.
    [[nodiscard]] double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    [[nodiscard]] std::uint64_t hash() const;
};

/// Bagged regression trees with greedy variance-reduction splits. Rows of `x` are samples.
/// Throws ConfigError for fewer than 5 samples or mismatched sizes.
ForestModel rf_fit(const Eigen::MatrixXd& x, const std::vector<double>& y, const ForestConfig& config);

/// Exact interventional Shapley values of one tree for foreground x against a single background row z.
Eigen::VectorXd tree_shap_pair(const DecisionTree& tree, const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& z);

struct ShapExplanation {
    Eigen::VectorXd phi;
    double base = 0.0;  // mean forest prediction over the background
    double prediction = 0.0;
};

/// Interventional Shapley values averaged over background rows. Throws ConfigError on an empty background.
ShapExplanation tree_shap(const ForestModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::MatrixXd& background);

inline constexpr double kImportanceEpsilon = 1e-8;

struct RegionImportance {
    Eigen::VectorXd mean_abs;    // s_r
    Eigen::VectorXd normalized;  // (s - min) / (max - min + eps)
    bool degenerate = false;     // all s_r equal
};

/// phi is subjects x regions.
RegionImportance shap_region_importance(const Eigen::MatrixXd& phi);

/// One class's forest and attributions, with the class's own profiles as background.
struct ShapResult {
    ClassLabel label = ClassLabel::NOR;
    std::vector<std::string> subject_ids;
    std::vector<int> region_ids;
    Eigen::MatrixXd phi;  // subjects x regions
    Eigen::VectorXd predictions;
    double base = 0.0;
    RegionImportance importance;
    std::uint64_t forest_hash = 0;
    double max_local_accuracy_error = 0.0;
};

ShapResult explain_class(const Eigen::MatrixXd& profiles, const std::vector<double>& targets,
                         const std::vector<std::string>& subject_ids, const std::vector<int>& region_ids,
                         ClassLabel label, const ForestConfig& config);

/// Paints s~ of region r onto its voxels (index r - 1), 0 on background, optionally times a mask.
/// Throws ShapeError when the mask dims or the importance length do not match the atlas.
Volume build_shap_volume(const Eigen::VectorXd& normalized, const AtlasMap& atlas,
                         const std::optional<Volume>& mask = std::nullopt);

void write_shap_csv(const std::vector<ShapResult>& results, const std::filesystem::path& path,
                    const std::vector<std::string>& preamble = {});
void write_importance_csv(const std::vector<ShapResult>& results, const std::filesystem::path& path,
                          const std::vector<std::string>& preamble = {});

}  // namespace latentscope
