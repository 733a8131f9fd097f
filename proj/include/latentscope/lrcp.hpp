#pragma once

#include "latentscope/projection.hpp"
#include "latentscope/region.hpp"
#include "latentscope/validation.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace latentscope {

enum class Category : std::uint8_t { Both, CorrOnly, ClassOnly, Neither };

std::string_view category_name(Category c);

/// A group comparison such as NOR_AD. The first class is the reference group; every other class is the
/// positive group of the binary test.
struct Comparison {
    std::string name;
    std::vector<ClassLabel> classes;
};

/// Parses underscore-joined class names ("NOR_MCI_MCIc_AD"). Throws ConfigError.
Comparison parse_comparison(std::string_view text);
std::vector<Comparison> default_comparisons();

struct LrcpOptions {
    BoundConfig bound;
    double alpha = 0.05;
    bool quadratic = false;  // adds the component x region product feature
    std::uint64_t seed = 1;  // balanced subsetting
};

struct LRCPCell {
    std::string comparison;
    Method method = Method::PCA;
    std::size_t layer = 1;
    std::size_t component = 0;
    int region = 0;
    std::size_t n = 0;
    double r = 0.0;
    double p = 1.0;
    double empirical_error = 0.5;
    double corrected_error = 1.0;
    Category category = Category::Neither;
    bool degenerate = false;

    [[nodiscard]] bool correlated(double alpha = 0.05) const { return !degenerate && p < alpha; }
    [[nodiscard]] bool classifies() const { return !degenerate && corrected_error < 0.5; }
};

/// Number of fitted coefficients of the cell classifier (intercept, component, region, optional product).
std::size_t cell_parameter_count(bool quadratic);

/// Dual test on one component/region pair. `positive` marks the non-reference group. The classifier is fit by
/// least squares on +-1 targets and its resubstitution error is corrected with complexity C times the
/// parameter count. Throws ConfigError when either group has fewer than 5 subjects.
LRCPCell lrcp_cell(std::span<const double> component, std::span<const double> region,
                   const std::vector<bool>& positive, const LrcpOptions& options);

struct LRCPGrid {
    std::vector<LRCPCell> cells;  // comparisons x methods x layers x components x regions
    std::vector<std::string> comparisons;
    std::vector<Method> methods;
    std::vector<std::size_t> layers;
    std::vector<int> region_ids;

    [[nodiscard]] const LRCPCell& at(std::size_t comparison, std::size_t method, std::size_t layer,
                                     std::size_t component, std::size_t region) const;
};

/// Builds the full grid. Embeddings must cover every (method, layer) pair of the methods and layers present.
LRCPGrid lrcp_grid(const std::vector<EmbeddingMatrix>& embeddings, const RegionProfileMatrix& profiles,
                   const std::vector<ClassLabel>& labels, const std::vector<Comparison>& comparisons,
                   const LrcpOptions& options);

struct SummaryRow {
    std::string comparison;
    Method method = Method::PCA;
    std::size_t layer = 1;
    std::size_t component = 0;
    std::size_t significant = 0;  // corrected error < 0.5
    std::size_t non_significant = 0;
    std::array<std::size_t, 4> categories{};  // indexed by Category
};

std::vector<SummaryRow> summary_counts(const LRCPGrid& grid);

/// Voxel value 1 - corrected error of its region's cell (clamped to [0,1]); background and degenerate cells 0.
Volume accuracy_map(const LRCPGrid& grid, std::string_view comparison, Method method, std::size_t layer,
                    std::size_t component, const AtlasMap& atlas);

void write_grid_csv(const LRCPGrid& grid, const std::filesystem::path& path,
                    const std::vector<std::string>& preamble = {});
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path,
                       const std::vector<std::string>& preamble = {});

}  // namespace latentscope
