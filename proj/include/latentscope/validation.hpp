#pragma once

#include "latentscope/stats.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace latentscope {

struct BoundConfig {
    double delta = 0.05;
    double complexity = 1.0;  // C
    double dropout = 0.5;     // eta, discount on the parameter term of the PAC-Bayes penalty
};

/// sqrt(C ln(1/delta) / (2n)). Throws ConfigError for n = 0, delta outside (0, 1] or C <= 0.
double concentration_bound(std::size_t n, double delta, double complexity);

struct BoundResult {
    std::size_t n = 0;
    double delta = 0.0;
    double complexity = 0.0;
    double empirical = 0.0;  // resubstitution error
    double psi = 0.0;
    double corrected = 0.0;  // min(1, empirical + psi)
    bool significant = false;  // corrected error < 0.5
};

BoundResult cubv_corrected_error(double empirical_error, std::size_t n, double delta, double complexity);

struct PacBayesResult {
    double empirical_accuracy = 0.0;
    double penalty = 0.0;
    double corrected = 0.0;  // max(0, accuracy - penalty)
    bool significant = false;  // corrected accuracy > 0.5
};

/// sqrt(((1 - eta) P ln 2 + ln(1/delta)) / (2n)).
double pac_bayes_penalty(std::size_t parameter_count, double dropout, std::size_t n, double delta);
PacBayesResult pac_bayes_corrected_accuracy(double empirical_accuracy, std::size_t parameter_count, double dropout,
                                            std::size_t n, double delta);

struct SarResult {
    std::size_t n = 0;
    double delta = 0.0;
    double complexity = 1.0;
    double slope = 0.0;
    double intercept = 0.0;
    double model_mae = 0.0;     // of the least-squares line, y z-scored
    double baseline_mae = 0.0;  // of the mean predictor
    double psi = 0.0;
    double model_corrected = 0.0;     // model_mae + psi
    double baseline_corrected = 0.0;  // baseline_mae - psi
    bool relevant = false;
    bool degenerate = false;  // constant x or y
};

/// Bound-corrected comparison of a fitted line against the intercept-only baseline.
/// Throws ConfigError for fewer than 10 points or mismatched lengths.
SarResult sar_relevance(std::span<const double> x, std::span<const double> y, double delta,
                        double complexity = 1.0);

enum class CorrectionMode { PValue, Sar };

/// Filters a correlation table. PValue keeps p < alpha. Sar re-fits each row's pair from the source data with
/// delta split evenly across the table's rows and keeps the relevant ones. Row order is preserved.
CorrelationTable correct_table(const CorrelationTable& table, CorrectionMode mode, const EmbeddingMatrix& embedding,
                               const RegionProfileMatrix& profiles, const std::vector<ClassLabel>& labels,
                               double alpha = 0.05, double delta = 0.05);

/// Component and region values behind one correlation row (its class only, or pooled).
std::pair<std::vector<double>, std::vector<double>> row_data(const CorrelationResult& row,
                                                             const EmbeddingMatrix& embedding,
                                                             const RegionProfileMatrix& profiles,
                                                             const std::vector<ClassLabel>& labels);

void write_bound_csv(const std::vector<std::pair<std::string, BoundResult>>& rows, double dropout,
                     const std::filesystem::path& path, const std::vector<std::string>& preamble = {});
void write_sar_csv(const std::vector<std::pair<std::string, SarResult>>& rows, const std::filesystem::path& path,
                   const std::vector<std::string>& preamble = {});

}  // namespace latentscope
