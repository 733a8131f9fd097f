#pragma once

#include "latentscope/attribution.hpp"
#include "latentscope/autoencoder.hpp"
#include "latentscope/lrcp.hpp"
#include "latentscope/phantom.hpp"
#include "latentscope/projection.hpp"
#include "latentscope/region.hpp"
#include "latentscope/validation.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace latentscope {

struct PipelineConfig {
    std::uint64_t seed = 1;
    PhantomConfig phantom;
    TrainConfig train;
    ProjectionOptions projection;
    std::vector<Method> methods{Method::PCA, Method::PLS, Method::TSNE, Method::UMAP};
    std::size_t bootstrap_resamples = 0;
    std::size_t top_n = 10;
    ForestConfig forest;
    BoundConfig bound;
    double alpha = 0.05;
    bool quadratic = false;
    std::vector<Method> map_methods{Method::PCA};  // accuracy maps are written for these
    std::vector<Comparison> comparisons = default_comparisons();
    std::filesystem::path out = "latentscope-run";
};

/// 32^3, 32 regions, 30 subjects per class, atrophy-like shifts for MCIc and AD.
PipelineConfig default_pipeline_config();

/// Applies "key = value" lines ('#' comments) on top of `base`. Unknown keys and bad values throw ConfigError.
PipelineConfig parse_pipeline_config(std::string_view text, PipelineConfig base = default_pipeline_config());
PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                    PipelineConfig base = default_pipeline_config());

/// Copies the global seed into every sub-seed and checks that referenced classes exist.
void finalize_config(PipelineConfig& config);

/// Canonical key=value lines of every setting except the output directory.
std::vector<std::string> config_lines(const PipelineConfig& config);

enum class Stage { Generate, Train, Embed, Correlate, Shap, Lrcp, Report };

inline constexpr std::array<Stage, 7> kAllStages = {Stage::Generate,  Stage::Train, Stage::Embed, Stage::Correlate,
                                                    Stage::Shap,      Stage::Lrcp,  Stage::Report};

std::string_view stage_name(Stage stage);
std::vector<Stage> stage_dependencies(Stage stage);

/// Hash over the settings this stage and its predecessors read.
std::uint64_t stage_hash(const PipelineConfig& config, Stage stage);

/// The generated cohort of a run directory (generate stage must be fresh).
Cohort load_generated_cohort(const PipelineConfig& config);

/// One comparison's embeddings with the region profiles and labels of the same subjects, in the same order.
struct ComparisonInputs {
    std::vector<EmbeddingMatrix> embeddings;
    RegionProfileMatrix profiles;
    std::vector<ClassLabel> labels;
};

ComparisonInputs load_comparison_inputs(const PipelineConfig& config, const Cohort& cohort, const Comparison& cmp);
LrcpOptions lrcp_options(const PipelineConfig& config);

/// Row-per-subject matrix of one encoder layer's activations (layer is 1-based).
Eigen::MatrixXd activation_matrix(const std::vector<ActivationSet>& activations, std::size_t layer);

/// Exclusive ownership of an output directory through a ".lock" file. Throws DependencyError if held.
class OutputLock {
public:
    explicit OutputLock(const std::filesystem::path& dir);
    ~OutputLock();
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::filesystem::path path_;
};

struct StageOutcome {
    Stage stage = Stage::Generate;
    bool skipped = false;  // up to date and not forced
    std::uint64_t hash = 0;
};

/// Runs one stage. Predecessors must have run under the same settings, else DependencyError.
/// A stage already up to date is skipped unless `force`.
StageOutcome run_stage(const PipelineConfig& config, Stage stage, bool force, std::ostream* log = nullptr);

/// Every stage in order.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, bool force, std::ostream* log = nullptr);

}  // namespace latentscope
