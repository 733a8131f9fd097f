#pragma once

#include "latentscope/projection.hpp"
#include "latentscope/region.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace latentscope {

/// Sample Pearson correlation. Throws ConfigError for n < 3 or length mismatch and
/// UndefinedStatistic when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

/// Two-tailed p-value of r under the t distribution with n - 2 degrees of freedom.
double pearson_pvalue(double r, std::size_t n);

/// Smallest |r| with p <= alpha at sample size n.
double critical_r(std::size_t n, double alpha = 0.05);

struct CorrelationResult {
    Method method = Method::PCA;
    std::size_t layer = 1;
    std::size_t component = 0;
    int region = 0;
    std::optional<ClassLabel> label;  // empty = pooled
    std::size_t n = 0;
    double r = 0.0;
    double r_squared = 0.0;
    double p_value = 1.0;
    bool defined = true;  // false when a component or region is constant
};

struct CorrelationTable {
    std::vector<CorrelationResult> rows;
    std::vector<std::string> notes;
    std::map<std::string, std::string> provenance;
};

/// Correlates every embedding component with every region, pooled or per class.
/// Classes with fewer than 3 subjects are skipped with a note. Throws ConfigError on misaligned subject ids.
CorrelationTable correlate_embedding_regions(const EmbeddingMatrix& embedding, const RegionProfileMatrix& profiles,
                                             const std::vector<ClassLabel>& labels, bool stratify);

struct RankedRegion {
    int region = 0;
    double abs_r = 0.0;
    double p_value = 1.0;
};

/// Regions ordered by their strongest |r| in the table (ties: lower id first). Undefined rows are ignored.
std::vector<RankedRegion> top_regions(const CorrelationTable& table, std::size_t n, bool significant_only = false,
                                      double alpha = 0.05);

struct OverlapEntry {
    std::string comparison_a;
    std::string comparison_b;
    std::vector<int> regions;
};

struct OverlapReport {
    std::vector<OverlapEntry> pairs;
    std::vector<int> recurring;  // regions shared by at least 3 pairs
};

/// Pairwise intersections of per-comparison region lists. Throws ConfigError for fewer than 2 comparisons.
OverlapReport overlap_report(const std::map<std::string, std::vector<int>>& top_lists);

void write_correlation_csv(const CorrelationTable& table, const std::filesystem::path& path,
                           const std::vector<std::string>& preamble = {});
void write_overlap_csv(const OverlapReport& report, const std::filesystem::path& path,
                       const std::vector<std::string>& preamble = {});

}  // namespace latentscope
