#include "latentscope/lrcp.hpp"

#include "latentscope/error.hpp"
#include "latentscope/phantom.hpp"
#include "latentscope/stats.hpp"
#include "text_util.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace latentscope {

std::string_view category_name(Category c) {
    switch (c) {
        case Category::Both: return "both";
        case Category::CorrOnly: return "corr_only";
        case Category::ClassOnly: return "class_only";
        case Category::Neither: return "neither";
    }
    return "?";
}

Comparison parse_comparison(std::string_view text) {
    Comparison c;
    c.name = std::string(text);
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = std::min(text.find('_', start), text.size());
        const auto label = parse_class(text.substr(start, end - start));
        if (!label) {
            throw ConfigError("unknown class '" + std::string(text.substr(start, end - start)) + "' in comparison '" +
                              c.name + "'");
        }
        if (std::find(c.classes.begin(), c.classes.end(), *label) != c.classes.end()) {
            throw ConfigError("comparison '" + c.name + "' repeats a class");
        }
        c.classes.push_back(*label);
        start = end + 1;
    }
    if (c.classes.size() < 2) {
        throw ConfigError("comparison '" + c.name + "' needs at least two classes");
    }
    return c;
}

std::vector<Comparison> default_comparisons() {
    return {parse_comparison("NOR_AD"), parse_comparison("NOR_MCI"), parse_comparison("NOR_MCIc"),
            parse_comparison("NOR_MCI_MCIc_AD")};
}

std::size_t cell_parameter_count(bool quadratic) { return quadratic ? 4 : 3; }

namespace {

std::vector<double> zscore(std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    double m = 0.0;
    for (double x : v) m += x;
    m /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / n);
    std::vector<double> z(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) z[i] = sd > 0.0 ? (v[i] - m) / sd : 0.0;
    return z;
}

}  // namespace

LRCPCell lrcp_cell(std::span<const double> component, std::span<const double> region,
                   const std::vector<bool>& positive, const LrcpOptions& options) {
    const std::size_t n = component.size();
    if (region.size() != n || positive.size() != n) {
        throw ConfigError("LRCP cell inputs differ in length");
    }
    const auto pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
    if (pos < 5 || n - pos < 5) {
        throw ConfigError("LRCP cell needs at least 5 subjects per group (got " + std::to_string(n - pos) + " and " +
                          std::to_string(pos) + ")");
    }
    LRCPCell cell;
    cell.n = n;
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    try {
        cell.r = pearson(component, region);
    } catch (const UndefinedStatistic&) {
        cell.degenerate = true;
        cell.r = cell.p = cell.empirical_error = cell.corrected_error = nan;
        cell.category = Category::Neither;
        return cell;
    }
    cell.p = pearson_pvalue(cell.r, n);

    const auto zc = zscore(component);
    const auto zr = zscore(region);
    const auto k = static_cast<Eigen::Index>(cell_parameter_count(options.quadratic));
    Eigen::MatrixXd design(static_cast<Eigen::Index>(n), k);
    Eigen::VectorXd target(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        design(ii, 0) = 1.0;
        design(ii, 1) = zc[i];
        design(ii, 2) = zr[i];
        if (options.quadratic) design(ii, 3) = zc[i] * zr[i];
        target(ii) = positive[i] ? 1.0 : -1.0;
    }
    const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(target);
    const Eigen::VectorXd score = design * coef;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if ((score(static_cast<Eigen::Index>(i)) > 0.0) != positive[i]) ++wrong;
    }
    cell.empirical_error = static_cast<double>(wrong) / static_cast<double>(n);
    const double complexity = options.bound.complexity * static_cast<double>(k);
    cell.corrected_error = cubv_corrected_error(cell.empirical_error, n, options.bound.delta, complexity).corrected;

    const bool corr = cell.correlated(options.alpha);
    const bool cls = cell.classifies();
    cell.category = corr ? (cls ? Category::Both : Category::CorrOnly) : (cls ? Category::ClassOnly : Category::Neither);
    return cell;
}

const LRCPCell& LRCPGrid::at(std::size_t comparison, std::size_t method, std::size_t layer, std::size_t component,
                             std::size_t region) const {
    const std::size_t r = region_ids.size();
    const std::size_t idx =
        (((comparison * methods.size() + method) * layers.size() + layer) * kComponents + component) * r + region;
    return cells.at(idx);
}

LRCPGrid lrcp_grid(const std::vector<EmbeddingMatrix>& embeddings, const RegionProfileMatrix& profiles,
                   const std::vector<ClassLabel>& labels, const std::vector<Comparison>& comparisons,
                   const LrcpOptions& options) {
    if (labels.size() != profiles.subject_ids.size()) {
        throw ConfigError("labels and region profiles are not aligned");
    }
    LRCPGrid grid;
    grid.region_ids = profiles.region_ids;
    std::set<Method> methods;
    std::set<std::size_t> layers;
    for (const auto& e : embeddings) {
        methods.insert(e.method);
        layers.insert(e.layer);
        if (e.subject_ids != profiles.subject_ids) {
            throw ConfigError("embedding " + std::string(method_name(e.method)) + " L" + std::to_string(e.layer) +
                              " is not aligned with the region profiles");
        }
        if (e.values.cols() != static_cast<Eigen::Index>(kComponents)) {
            throw ShapeError("embedding must have " + std::to_string(kComponents) + " components");
        }
    }
    grid.methods.assign(methods.begin(), methods.end());
    grid.layers.assign(layers.begin(), layers.end());
    std::vector<const EmbeddingMatrix*> table(grid.methods.size() * grid.layers.size(), nullptr);
    for (const auto& e : embeddings) {
        const auto m = static_cast<std::size_t>(std::find(grid.methods.begin(), grid.methods.end(), e.method) -
                                                grid.methods.begin());
        const auto l = static_cast<std::size_t>(std::find(grid.layers.begin(), grid.layers.end(), e.layer) -
                                                grid.layers.begin());
        table[m * grid.layers.size() + l] = &e;
    }
    std::string missing;
    for (std::size_t m = 0; m < grid.methods.size(); ++m) {
        for (std::size_t l = 0; l < grid.layers.size(); ++l) {
            if (table[m * grid.layers.size() + l] == nullptr) {
                missing += " " + std::string(method_name(grid.methods[m])) + "/L" + std::to_string(grid.layers[l]);
            }
        }
    }
    if (!missing.empty()) {
        throw ConfigError("missing embeddings for:" + missing);
    }

    const std::size_t regions = profiles.region_ids.size();
    for (const auto& cmp : comparisons) {
        grid.comparisons.push_back(cmp.name);
        const std::set<ClassLabel> groups(cmp.classes.begin(), cmp.classes.end());
        const auto rows = balanced_subset_indices(labels, groups, options.seed);
        std::vector<bool> positive(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) positive[i] = labels[rows[i]] != cmp.classes.front();
        std::vector<std::vector<double>> region_values(regions, std::vector<double>(rows.size()));
        for (std::size_t j = 0; j < regions; ++j) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                region_values[j][i] =
                    profiles.values(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(j));
            }
        }
        std::vector<double> comp(rows.size());
        for (std::size_t m = 0; m < grid.methods.size(); ++m) {
            for (std::size_t l = 0; l < grid.layers.size(); ++l) {
                const auto& e = *table[m * grid.layers.size() + l];
                for (std::size_t c = 0; c < kComponents; ++c) {
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                        comp[i] = e.values(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(c));
                    }
                    for (std::size_t j = 0; j < regions; ++j) {
                        LRCPCell cell = lrcp_cell(comp, region_values[j], positive, options);
                        cell.comparison = cmp.name;
                        cell.method = e.method;
                        cell.layer = e.layer;
                        cell.component = c;
                        cell.region = profiles.region_ids[j];
                        grid.cells.push_back(std::move(cell));
                    }
                }
            }
        }
    }
    return grid;
}

std::vector<SummaryRow> summary_counts(const LRCPGrid& grid) {
    std::vector<SummaryRow> out;
    const std::size_t regions = grid.region_ids.size();
    for (std::size_t start = 0; start < grid.cells.size(); start += regions) {
        const auto& first = grid.cells[start];
        SummaryRow row{first.comparison, first.method, first.layer, first.component, 0, 0, {}};
        for (std::size_t j = 0; j < regions; ++j) {
            const auto& cell = grid.cells[start + j];
            if (cell.classifies()) {
                ++row.significant;
            } else {
                ++row.non_significant;
            }
            ++row.categories[static_cast<std::size_t>(cell.category)];
        }
        out.push_back(std::move(row));
    }
    return out;
}

Volume accuracy_map(const LRCPGrid& grid, std::string_view comparison, Method method, std::size_t layer,
                    std::size_t component, const AtlasMap& atlas) {
    const auto ci = std::find(grid.comparisons.begin(), grid.comparisons.end(), comparison);
    const auto mi = std::find(grid.methods.begin(), grid.methods.end(), method);
    const auto li = std::find(grid.layers.begin(), grid.layers.end(), layer);
    if (ci == grid.comparisons.end() || mi == grid.methods.end() || li == grid.layers.end() ||
        component >= kComponents) {
        throw ConfigError("accuracy map slice not present in the grid");
    }
    if (atlas.region_count() != grid.region_ids.size()) {
        throw ShapeError("atlas has " + std::to_string(atlas.region_count()) + " regions but the grid has " +
                         std::to_string(grid.region_ids.size()));
    }
    std::vector<float> value(atlas.region_count() + 1, 0.0f);
    for (std::size_t j = 0; j < grid.region_ids.size(); ++j) {
        const auto& cell = grid.at(static_cast<std::size_t>(ci - grid.comparisons.begin()),
                                   static_cast<std::size_t>(mi - grid.methods.begin()),
                                   static_cast<std::size_t>(li - grid.layers.begin()), component, j);
        const int id = grid.region_ids[j];
        if (id < 1 || static_cast<std::size_t>(id) > atlas.region_count()) {
            throw ShapeError("grid region " + std::to_string(id) + " is outside the atlas");
        }
        if (!cell.degenerate) {
            value[static_cast<std::size_t>(id)] = static_cast<float>(std::clamp(1.0 - cell.corrected_error, 0.0, 1.0));
        }
    }
    Volume out(atlas.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value[atlas[i]];
    return out;
}

void write_grid_csv(const LRCPGrid& grid, const std::filesystem::path& path, const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "comparison,method,layer,component,region,r,p,emp_error,corr_error,category\n";
    for (const auto& c : grid.cells) {
        out << c.comparison << ',' << method_name(c.method) << ",L" << c.layer << ",D" << c.component << ','
            << c.region << ',';
        if (c.degenerate) {
            out << "NA,NA,NA,NA,";
        } else {
            out << text::num(c.r) << ',' << text::num(c.p) << ',' << text::num(c.empirical_error) << ','
                << text::num(c.corrected_error) << ',';
        }
        out << category_name(c.category) << '\n';
    }
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path,
                       const std::vector<std::string>& preamble) {
    auto out = text::open_output(path, preamble);
    out << "method,group,layer,component,significant,non_significant,both,corr_only,class_only,neither\n";
    for (const auto& r : rows) {
        out << method_name(r.method) << ',' << r.comparison << ",L" << r.layer << ",D" << r.component << ','
            << r.significant << ',' << r.non_significant;
        for (auto c : r.categories) out << ',' << c;
        out << '\n';
    }
}

}  // namespace latentscope
