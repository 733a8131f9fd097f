#include "latentscope/stats.hpp"

#include "latentscope/error.hpp"
#include "text_util.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace latentscope {

namespace {

bool is_constant(std::span<const double> v, double ss) {
    double scale = 1.0;
    for (double x : v) scale = std::max(scale, std::abs(x));
    return std::sqrt(ss / static_cast<double>(v.size())) <= 1e-12 * scale;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ConfigError("pearson: inputs differ in length");
    }
    const std::size_t n = x.size();
    if (n < 3) {
        throw ConfigError("pearson: need at least 3 observations");
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (is_constant(x, sxx) || is_constant(y, syy)) {
        throw UndefinedStatistic("pearson: constant input");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson_pvalue(double r, std::size_t n) {
    if (n < 3) {
        throw ConfigError("pearson_pvalue: need n >= 3");
    }
    if (!(std::abs(r) <= 1.0)) {
        throw ConfigError("pearson_pvalue: |r| must not exceed 1");
    }
    if (std::abs(r) == 1.0) return 0.0;
    // With t = r sqrt(dof / (1 - r^2)): dof / (dof + t^2) = 1 - r^2.
    const double dof = static_cast<double>(n - 2);
    return std::clamp(boost::math::ibeta(0.5 * dof, 0.5, 1.0 - r * r), 0.0, 1.0);
}

double critical_r(std::size_t n, double alpha) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (pearson_pvalue(mid, n) > alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return hi;
}

CorrelationTable correlate_embedding_regions(const EmbeddingMatrix& embedding, const RegionProfileMatrix& profiles,
                                             const std::vector<ClassLabel>& labels, bool stratify) {
    if (embedding.subject_ids != profiles.subject_ids || labels.size() != profiles.subject_ids.size() ||
        embedding.values.rows() != profiles.rows()) {
        throw ConfigError("embedding, region profiles and labels are not aligned by subject");
    }
    CorrelationTable table;
    table.provenance["method"] = std::string(method_name(embedding.method));
    table.provenance["layer"] = "L" + std::to_string(embedding.layer);

    std::vector<std::pair<std::optional<ClassLabel>, std::vector<Eigen::Index>>> groups;
    if (stratify) {
        for (auto c : kAllClasses) {
            std::vector<Eigen::Index> rows;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
            }
            if (rows.empty()) continue;
            if (rows.size() < 3) {
                table.notes.push_back("class " + std::string(class_name(c)) + " skipped (n=" +
                                      std::to_string(rows.size()) + ")");
                continue;
            }
            groups.emplace_back(c, std::move(rows));
        }
    } else {
        std::vector<Eigen::Index> rows(labels.size());
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<Eigen::Index>(i);
        groups.emplace_back(std::nullopt, std::move(rows));
    }

    const auto nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& [label, rows] : groups) {
        const std::size_t n = rows.size();
        std::vector<double> comp(n), reg(n);
        for (Eigen::Index c = 0; c < embedding.values.cols(); ++c) {
            for (std::size_t i = 0; i < n; ++i) comp[i] = embedding.values(rows[i], c);
            for (Eigen::Index j = 0; j < profiles.cols(); ++j) {
                for (std::size_t i = 0; i < n; ++i) reg[i] = profiles.values(rows[i], j);
                CorrelationResult res;
                res.method = embedding.method;
                res.layer = embedding.layer;
                res.component = static_cast<std::size_t>(c);
                res.region = profiles.region_ids[static_cast<std::size_t>(j)];
                res.label = label;
                res.n = n;
                try {
                    res.r = pearson(comp, reg);
                    res.r_squared = res.r * res.r;
                    res.p_value = pearson_pvalue(res.r, n);
                } catch (const UndefinedStatistic&) {
                    res.defined = false;
                    res.r = res.r_squared = res.p_value = nan;
                }
                table.rows.push_back(res);
            }
        }
    }
    return table;
}

std::vector<RankedRegion> top_regions(const CorrelationTable& table, std::size_t n, bool significant_only,
                                      double alpha) {
    std::map<int, RankedRegion> best;
    for (const auto& row : table.rows) {
        if (!row.defined) continue;
        if (significant_only && !(row.p_value < alpha)) continue;
        const double a = std::abs(row.r);
        auto [it, inserted] = best.try_emplace(row.region, RankedRegion{row.region, a, row.p_value});
        if (!inserted && a > it->second.abs_r) it->second = RankedRegion{row.region, a, row.p_value};
    }
    std::vector<RankedRegion> ranked;
    ranked.reserve(best.size());
    for (const auto& [id, r] : best) ranked.push_back(r);
    std::stable_sort(ranked.begin(), ranked.end(), [](const RankedRegion& a, const RankedRegion& b) {
        if (a.abs_r != b.abs_r) return a.abs_r > b.abs_r;
        return a.region < b.region;
    });
    if (ranked.size() > n) ranked.resize(n);
    return ranked;
}

OverlapReport overlap_report(const std::map<std::string, std::vector<int>>& top_lists) {
    if (top_lists.size() < 2) {
        throw ConfigError("overlap report needs at least 2 comparisons");
    }
    OverlapReport report;
    std::map<int, std::size_t> pair_count;
    for (auto a = top_lists.begin(); a != top_lists.end(); ++a) {
        const std::set<int> sa(a->second.begin(), a->second.end());
        for (auto b = std::next(a); b != top_lists.end(); ++b) {
            const std::set<int> sb(b->second.begin(), b->second.end());
            OverlapEntry entry{a->first, b->first, {}};
            std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(entry.regions));
            for (int r : entry.regions) ++pair_count[r];
            report.pairs.push_back(std::move(entry));
        }
    }
    for (const auto& [region, count] : pair_count) {
        if (count >= 3) report.recurring.push_back(region);
    }
    return report;
}

void write_correlation_csv(const CorrelationTable& table, const std::filesystem::path& path,
                           const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "method,layer,component,region,class,n,r,r2,p\n";
    for (const auto& row : table.rows) {
        out << method_name(row.method) << ",L" << row.layer << ",D" << row.component << ',' << row.region << ','
            << (row.label ? std::string(class_name(*row.label)) : std::string("pooled")) << ',' << row.n << ',';
        if (row.defined) {
            out << text::num(row.r) << ',' << text::num(row.r_squared) << ',' << text::num(row.p_value) << '\n';
        } else {
            out << "NA,NA,NA\n";
        }
    }
}

void write_overlap_csv(const OverlapReport& report, const std::filesystem::path& path,
                       const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "comparison_a,comparison_b,region\n";
    for (const auto& e : report.pairs) {
        for (int r : e.regions) out << e.comparison_a << ',' << e.comparison_b << ',' << r << '\n';
    }
}

}  // namespace latentscope
