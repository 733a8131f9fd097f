#include "latentscope/validation.hpp"

#include "latentscope/error.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>

namespace latentscope {

double concentration_bound(std::size_t n, double delta, double complexity) {
    if (n == 0) {
        throw ConfigError("concentration bound needs n >= 1");
    }
    if (delta == 0.0) {
        throw ConfigError("concentration bound is infinite at delta = 0");
    }
    if (!(delta > 0.0 && delta <= 1.0)) {
        throw ConfigError("delta must lie in (0, 1]");
    }
    if (!(complexity > 0.0)) {
        throw ConfigError("complexity constant must be positive");
    }
    return std::sqrt(complexity * std::log(1.0 / delta) / (2.0 * static_cast<double>(n)));
}

BoundResult cubv_corrected_error(double empirical_error, std::size_t n, double delta, double complexity) {
    if (!(empirical_error >= 0.0 && empirical_error <= 1.0)) {
        throw ConfigError("empirical error must lie in [0, 1]");
    }
    BoundResult r;
    r.n = n;
    r.delta = delta;
    r.complexity = complexity;
    r.empirical = empirical_error;
    r.psi = concentration_bound(n, delta, complexity);
    r.corrected = std::min(1.0, empirical_error + r.psi);
    r.significant = r.corrected < 0.5;
    return r;
}

double pac_bayes_penalty(std::size_t parameter_count, double dropout, std::size_t n, double delta) {
    if (parameter_count == 0 || n == 0) {
        throw ConfigError("PAC-Bayes penalty needs parameter_count >= 1 and n >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1)");
    }
    if (!(delta > 0.0 && delta <= 1.0)) {
        throw ConfigError("delta must lie in (0, 1]");
    }
    const double complexity = (1.0 - dropout) * static_cast<double>(parameter_count) * std::log(2.0);
    return std::sqrt((complexity + std::log(1.0 / delta)) / (2.0 * static_cast<double>(n)));
}

PacBayesResult pac_bayes_corrected_accuracy(double empirical_accuracy, std::size_t parameter_count, double dropout,
                                            std::size_t n, double delta) {
    if (!(empirical_accuracy >= 0.0 && empirical_accuracy <= 1.0)) {
        throw ConfigError("empirical accuracy must lie in [0, 1]");
    }
    PacBayesResult r;
    r.empirical_accuracy = empirical_accuracy;
    r.penalty = pac_bayes_penalty(parameter_count, dropout, n, delta);
    r.corrected = std::max(0.0, empirical_accuracy - r.penalty);
    r.significant = r.corrected > 0.5;
    return r;
}

SarResult sar_relevance(std::span<const double> x, std::span<const double> y, double delta, double complexity) {
    if (x.size() != y.size()) {
        throw ConfigError("SAR: inputs differ in length");
    }
    const std::size_t n = x.size();
    if (n < 10) {
        throw ConfigError("SAR needs at least 10 points");
    }
    SarResult r;
    r.n = n;
    r.delta = delta;
    r.complexity = complexity;
    r.psi = concentration_bound(n, delta, complexity);
    const double nd = static_cast<double>(n);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= nd;
    my /= nd;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    double scale_x = 1.0, scale_y = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        scale_x = std::max(scale_x, std::abs(x[i]));
        scale_y = std::max(scale_y, std::abs(y[i]));
    }
    const double sy = std::sqrt(syy / nd);
    if (std::sqrt(sxx / nd) <= 1e-12 * scale_x || sy <= 1e-12 * scale_y) {
        r.degenerate = true;
        return r;
    }
    // Risks are measured on z-scored y so they share the bound's scale.
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double model = 0.0, baseline = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        model += std::abs(y[i] - (r.slope * x[i] + r.intercept)) / sy;
        baseline += std::abs(y[i] - my) / sy;
    }
    r.model_mae = model / nd;
    r.baseline_mae = baseline / nd;
    r.model_corrected = r.model_mae + r.psi;
    r.baseline_corrected = r.baseline_mae - r.psi;
    r.relevant = r.model_corrected < r.baseline_corrected;
    return r;
}

std::pair<std::vector<double>, std::vector<double>> row_data(const CorrelationResult& row,
                                                             const EmbeddingMatrix& embedding,
                                                             const RegionProfileMatrix& profiles,
                                                             const std::vector<ClassLabel>& labels) {
    if (embedding.subject_ids != profiles.subject_ids || labels.size() != profiles.subject_ids.size()) {
        throw ConfigError("embedding, region profiles and labels are not aligned by subject");
    }
    const auto col = std::find(profiles.region_ids.begin(), profiles.region_ids.end(), row.region);
    if (col == profiles.region_ids.end() || row.component >= static_cast<std::size_t>(embedding.values.cols())) {
        throw ConfigError("correlation row refers to a missing region or component");
    }
    const auto j = static_cast<Eigen::Index>(col - profiles.region_ids.begin());
    const auto c = static_cast<Eigen::Index>(row.component);
    std::vector<double> x, y;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (row.label && labels[i] != *row.label) continue;
        x.push_back(embedding.values(static_cast<Eigen::Index>(i), c));
        y.push_back(profiles.values(static_cast<Eigen::Index>(i), j));
    }
    return {std::move(x), std::move(y)};
}

CorrelationTable correct_table(const CorrelationTable& table, CorrectionMode mode, const EmbeddingMatrix& embedding,
                               const RegionProfileMatrix& profiles, const std::vector<ClassLabel>& labels,
                               double alpha, double delta) {
    CorrelationTable out;
    out.notes = table.notes;
    out.provenance = table.provenance;
    out.provenance["correction"] = mode == CorrectionMode::PValue ? "pvalue" : "sar";
    if (table.rows.empty()) return out;
    const double pair_delta = delta / static_cast<double>(table.rows.size());
    for (const auto& row : table.rows) {
        if (!row.defined) continue;
        if (mode == CorrectionMode::PValue) {
            if (row.p_value < alpha) out.rows.push_back(row);
            continue;
        }
        // component is x, region intensity is the response
        auto [x, y] = row_data(row, embedding, profiles, labels);
        if (x.size() < 10) continue;
        if (sar_relevance(x, y, pair_delta).relevant) out.rows.push_back(row);
    }
    return out;
}

void write_bound_csv(const std::vector<std::pair<std::string, BoundResult>>& rows, double dropout,
                     const std::filesystem::path& path, const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "context,n,delta,C,eta,empirical,psi,corrected,significant\n";
    for (const auto& [context, r] : rows) {
        out << context << ',' << r.n << ',' << text::num(r.delta) << ',' << text::num(r.complexity) << ','
            << text::num(dropout) << ',' << text::num(r.empirical) << ',' << text::num(r.psi) << ','
            << text::num(r.corrected) << ',' << (r.significant ? 1 : 0) << '\n';
    }
}

void write_sar_csv(const std::vector<std::pair<std::string, SarResult>>& rows, const std::filesystem::path& path,
                   const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "context,n,delta,C,eta,empirical,psi,corrected,significant,model_mae,baseline_mae,relevant\n";
    for (const auto& [context, r] : rows) {
        out << context << ',' << r.n << ',' << text::num(r.delta) << ',' << text::num(r.complexity) << ",0,"
            << text::num(r.model_mae) << ','
            << text::num(r.psi) << ',' << text::num(r.model_corrected) << ',' << (r.relevant ? 1 : 0) << ','
            << text::num(r.model_mae) << ',' << text::num(r.baseline_mae) << ',' << (r.relevant ? 1 : 0) << '\n';
    }
}

}  // namespace latentscope
