#include "latentscope/pipeline.hpp"

#include "latentscope/error.hpp"
#include "latentscope/hash.hpp"
#include "latentscope/io.hpp"
#include "latentscope/region.hpp"
#include "latentscope/rng.hpp"
#include "latentscope/stats.hpp"

#include "text_util.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

namespace latentscope {

namespace fs = std::filesystem;
using text::num;

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kProjectionStream = 2;
constexpr std::uint64_t kForestStream = 3;
constexpr std::uint64_t kSubsetStream = 4;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
        x = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return x;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size() || !std::isfinite(x)) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return x;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

ClassLabel to_class(const std::string& key, const std::string& v) {
    const auto c = parse_class(v);
    if (!c) throw ConfigError(key + ": unknown class '" + v + "'");
    return *c;
}

std::vector<Method> to_methods(const std::string& key, const std::string& v) {
    std::vector<Method> out;
    if (v.empty() || v == "none") return out;
    for (const auto& m : split(v, ',')) {
        try {
            out.push_back(parse_method(m));
        } catch (const ConfigError& e) {
            throw ConfigError(key + ": " + e.what());
        }
    }
    return out;
}

std::string methods_text(const std::vector<Method>& methods) {
    if (methods.empty()) return "none";
    std::vector<std::string> parts;
    for (auto m : methods) parts.emplace_back(method_name(m));
    return join(parts, ',');
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"seed", [](PipelineConfig& c, const auto& k, const auto& v) { c.seed = to_u64(k, v); }},
        {"out", [](PipelineConfig& c, const auto&, const auto& v) { c.out = v; }},
        {"phantom.dims",
         [](PipelineConfig& c, const auto& k, const auto& v) {
             const auto p = split(v, 'x');
             if (p.size() != 3) throw ConfigError(k + ": expected DXxDYxDZ, got '" + v + "'");
             c.phantom.dims = {to_u64(k, p[0]), to_u64(k, p[1]), to_u64(k, p[2])};
         }},
        {"phantom.regions",
         [](PipelineConfig& c, const auto& k, const auto& v) {
             c.phantom.region_count = static_cast<std::uint32_t>(to_u64(k, v));
         }},
        {"phantom.counts",
         [](PipelineConfig& c, const auto& k, const auto& v) {
             c.phantom.class_counts.clear();
             for (const auto& item : split(v, ',')) {
                 const auto p = split(item, ':');
                 if (p.size() != 2) throw ConfigError(k + ": expected CLASS:COUNT, got '" + item + "'");
                 c.phantom.class_counts[to_class(k, p[0])] = to_u64(k, p[1]);
             }
         }},
        {"phantom.effects",
         [](PipelineConfig& c, const auto& k, const auto& v) {
             c.phantom.effects.clear();
             if (v.empty() || v == "none") return;
             for (const auto& item : split(v, ',')) {
                 const auto p = split(item, ':');
                 if (p.size() != 3) throw ConfigError(k + ": expected CLASS:REGION:SHIFT, got '" + item + "'");
                 c.phantom.effects.push_back(
                     {static_cast<std::uint32_t>(to_u64(k, p[1])), to_class(k, p[0]), to_double(k, p[2])});
             }
         }},
        {"phantom.noise", [](PipelineConfig& c, const auto& k, const auto& v) { c.phantom.noise_sigma = to_double(k, v); }},
        {"phantom.smoothness",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.phantom.smoothness = to_double(k, v); }},
        {"phantom.severity_spread",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.phantom.severity_spread = to_double(k, v); }},
        {"comparisons",
         [](PipelineConfig& c, const auto&, const auto& v) {
             c.comparisons.clear();
             for (const auto& item : split(v, ',')) c.comparisons.push_back(parse_comparison(item));
         }},
        {"train.lr", [](PipelineConfig& c, const auto& k, const auto& v) { c.train.learning_rate = to_double(k, v); }},
        {"train.epochs", [](PipelineConfig& c, const auto& k, const auto& v) { c.train.max_epochs = to_u64(k, v); }},
        {"train.patience", [](PipelineConfig& c, const auto& k, const auto& v) { c.train.patience = to_u64(k, v); }},
        {"train.batch", [](PipelineConfig& c, const auto& k, const auto& v) { c.train.batch_size = to_u64(k, v); }},
        {"train.loss", [](PipelineConfig& c, const auto&, const auto& v) { c.train.loss_kind = parse_loss(v); }},
        {"train.alpha", [](PipelineConfig& c, const auto& k, const auto& v) { c.train.alpha = to_double(k, v); }},
        {"projection.methods", [](PipelineConfig& c, const auto& k, const auto& v) { c.methods = to_methods(k, v); }},
        {"projection.bootstrap",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.bootstrap_resamples = to_u64(k, v); }},
        {"projection.tsne.perplexity",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.projection.tsne.perplexity = to_double(k, v); }},
        {"projection.tsne.iterations",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.projection.tsne.iterations = to_u64(k, v); }},
        {"projection.tsne.learning_rate",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.projection.tsne.learning_rate = to_double(k, v); }},
        {"projection.umap.neighbors",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.projection.umap.n_neighbors = to_u64(k, v); }},
        {"projection.umap.min_dist",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.projection.umap.min_dist = to_double(k, v); }},
        {"projection.umap.epochs",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.projection.umap.epochs = to_u64(k, v); }},
        {"correlate.top_n", [](PipelineConfig& c, const auto& k, const auto& v) { c.top_n = to_u64(k, v); }},
        {"shap.trees", [](PipelineConfig& c, const auto& k, const auto& v) { c.forest.n_trees = to_u64(k, v); }},
        {"shap.depth", [](PipelineConfig& c, const auto& k, const auto& v) { c.forest.max_depth = to_u64(k, v); }},
        {"shap.min_leaf", [](PipelineConfig& c, const auto& k, const auto& v) { c.forest.min_leaf = to_u64(k, v); }},
        {"bounds.delta", [](PipelineConfig& c, const auto& k, const auto& v) { c.bound.delta = to_double(k, v); }},
        {"bounds.complexity",
         [](PipelineConfig& c, const auto& k, const auto& v) { c.bound.complexity = to_double(k, v); }},
        {"bounds.dropout", [](PipelineConfig& c, const auto& k, const auto& v) { c.bound.dropout = to_double(k, v); }},
        {"lrcp.alpha", [](PipelineConfig& c, const auto& k, const auto& v) { c.alpha = to_double(k, v); }},
        {"lrcp.quadratic", [](PipelineConfig& c, const auto& k, const auto& v) { c.quadratic = to_bool(k, v); }},
        {"lrcp.maps", [](PipelineConfig& c, const auto& k, const auto& v) { c.map_methods = to_methods(k, v); }},
    };
    return table;
}

fs::path stage_dir(const PipelineConfig& c, Stage s) { return c.out / std::string(stage_name(s)); }

std::uint64_t subset_seed(const PipelineConfig& c) { return derive_seed(c.seed, kSubsetStream); }

std::set<ClassLabel> class_set(const Comparison& cmp) { return {cmp.classes.begin(), cmp.classes.end()}; }

std::vector<std::string> preamble(const PipelineConfig& c, Stage s) {
    return {"stage=" + std::string(stage_name(s)), "config_hash=" + hex64(stage_hash(c, s))};
}

std::uint64_t file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DependencyError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    Fnv1a h;
    h.add(ss.str());
    return h.value();
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DependencyError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Reads "config_hash=" from a stage's run.log; nullopt when the stage never completed.
std::optional<std::uint64_t> logged_hash(const fs::path& dir) {
    std::ifstream in(dir / "run.log");
    if (!in) return std::nullopt;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("config_hash=", 0) == 0) {
            try {
                return std::stoull(line.substr(12), nullptr, 16);
            } catch (const std::exception&) {
                return std::nullopt;
            }
        }
    }
    return std::nullopt;
}

void require_fresh(const PipelineConfig& c, Stage stage) {
    std::set<Stage> closure;
    std::vector<Stage> todo = stage_dependencies(stage);
    while (!todo.empty()) {
        const auto s = todo.back();
        todo.pop_back();
        if (closure.insert(s).second) {
            for (auto d : stage_dependencies(s)) todo.push_back(d);
        }
    }
    for (auto dep : closure) {
        const auto dir = stage_dir(c, dep);
        const auto got = logged_hash(dir);
        const std::string name(stage_name(dep));
        if (!got) {
            throw DependencyError("stage '" + std::string(stage_name(stage)) + "' needs '" + name + "', but " +
                                  (dir / "run.log").string() + " is missing; run the " + name + " stage first");
        }
        const auto want = stage_hash(c, dep);
        if (*got != want) {
            throw DependencyError("stage '" + name + "' output in " + dir.string() + " is stale: it was produced with config hash " +
                                  hex64(*got) + " but the current settings give " + hex64(want) + "; rerun " + name);
        }
    }
}

/// Collects artifact hashes and notes, then writes run.log last so an interrupted stage leaves none.
class RunLog {
public:
    RunLog(const PipelineConfig& c, Stage s) : config_(c), stage_(s), dir_(stage_dir(c, s)) {}

    void artifact(const fs::path& p) {
        artifacts_.push_back(fs::relative(p, dir_).generic_string() + " " + hex64(file_hash(p)));
    }
    void note(std::string line) { notes_.push_back(std::move(line)); }

    void write() const {
        auto out = text::open_output(dir_ / "run.log", {});
        out << "stage=" << stage_name(stage_) << '\n';
        out << "config_hash=" << hex64(stage_hash(config_, stage_)) << '\n';
        for (const auto& a : artifacts_) out << "artifact " << a << '\n';
        for (const auto& n : notes_) out << "note " << n << '\n';
    }

private:
    const PipelineConfig& config_;
    Stage stage_;
    fs::path dir_;
    std::vector<std::string> artifacts_;
    std::vector<std::string> notes_;
};

Cohort load_generated(const PipelineConfig& c) {
    const auto dir = stage_dir(c, Stage::Generate);
    return load_cohort(dir / "manifest.csv", dir / "atlas.lsatl");
}

AEParams load_trained(const PipelineConfig& c, const Comparison& cmp) {
    const auto path = stage_dir(c, Stage::Train) / cmp.name / "model.lsae";
    std::uint64_t h = 0;
    auto params = load_model(path, &h);
    if (h != stage_hash(c, Stage::Train)) {
        throw DependencyError(path.string() + " carries config hash " + hex64(h) + ", expected " +
                              hex64(stage_hash(c, Stage::Train)));
    }
    return params;
}

void say(std::ostream* log, const std::string& msg) {
    if (log) *log << msg << '\n' << std::flush;
}

void run_generate(const PipelineConfig& c, RunLog& rl, std::ostream* log) {
    const auto dir = stage_dir(c, Stage::Generate);
    const auto cohort = generate_phantom_cohort(c.phantom);
    save_cohort(cohort, dir, preamble(c, Stage::Generate));
    rl.artifact(dir / "manifest.csv");
    rl.artifact(dir / "atlas.lsatl");
    for (const auto& s : cohort.subjects) rl.artifact(dir / "volumes" / (s.id + ".lsvol"));
    say(log, "generate: " + std::to_string(cohort.size()) + " subjects, " + to_string(c.phantom.dims) + ", R=" +
                 std::to_string(c.phantom.region_count));
}

void run_train(const PipelineConfig& c, RunLog& rl, std::ostream* log) {
    const auto cohort = load_generated(c);
    for (const auto& cmp : c.comparisons) {
        const auto sub = balanced_subset(cohort, class_set(cmp), subset_seed(c));
        const auto dir = stage_dir(c, Stage::Train) / cmp.name;
        fs::create_directories(dir);
        say(log, "train " + cmp.name + ": " + std::to_string(sub.size()) + " subjects");
        auto result = train(sub, c.train, [&](std::size_t epoch, double loss) {
            say(log, "  epoch " + std::to_string(epoch) + " loss " + num(loss));
        });
        save_model(result.params, dir / "model.lsae", stage_hash(c, Stage::Train));
        save_train_report(result.report, dir / "loss.csv", preamble(c, Stage::Train));
        rl.artifact(dir / "model.lsae");
        rl.artifact(dir / "loss.csv");
        rl.note(cmp.name + " final_loss=" + num(result.report.epoch_loss.back()) +
                " epochs=" + std::to_string(result.report.stopped_epoch));
    }
}

void run_embed(const PipelineConfig& c, RunLog& rl, std::ostream* log) {
    if (c.methods.empty()) throw ConfigError("projection.methods is empty");
    const auto cohort = load_generated(c);
    for (const auto& cmp : c.comparisons) {
        const auto sub = balanced_subset(cohort, class_set(cmp), subset_seed(c));
        const auto params = load_trained(c, cmp);
        const auto acts = extract_activations(sub, params);
        const auto labels = sub.labels();
        std::vector<std::string> ids;
        for (const auto& s : sub.subjects) ids.push_back(s.id);
        std::vector<EmbeddingMatrix> embeddings;
        std::vector<std::string> boot_rows;
        for (std::size_t layer = 1; layer <= kEncoderLayers; ++layer) {
            const auto x = activation_matrix(acts, layer);
            for (auto m : c.methods) {
                say(log, "embed " + cmp.name + ": " + std::string(method_name(m)) + " L" + std::to_string(layer));
                auto e = embed(x, labels, m, layer, c.projection);
                e.subject_ids = ids;
                for (const auto& w : e.warnings) rl.note(cmp.name + " " + std::string(method_name(m)) + " L" +
                                                         std::to_string(layer) + ": " + w);
                embeddings.push_back(std::move(e));
                if (c.bootstrap_resamples > 0) {
                    const auto b = bootstrap_embeddings(x, labels, m, c.bootstrap_resamples,
                                                        derive_seed(c.projection.seed, layer), c.projection);
                    boot_rows.push_back(std::string(method_name(m)) + ",L" + std::to_string(layer) + "," +
                                        std::to_string(b.resamples) + "," + num(b.median_dispersion) + "," +
                                        (b.degenerate ? "1" : "0"));
                }
            }
        }
        const auto dir = stage_dir(c, Stage::Embed) / cmp.name;
        fs::create_directories(dir);
        write_embeddings_csv(embeddings, dir / "embeddings.csv", preamble(c, Stage::Embed));
        write_embedding_metadata(embeddings, dir / "metadata.txt", preamble(c, Stage::Embed));
        rl.artifact(dir / "embeddings.csv");
        rl.artifact(dir / "metadata.txt");
        if (!boot_rows.empty()) {
            auto out = text::open_output(dir / "bootstrap.csv", preamble(c, Stage::Embed));
            out << "method,layer,resamples,median_dispersion,degenerate\n";
            for (const auto& r : boot_rows) out << r << '\n';
            out.close();
            rl.artifact(dir / "bootstrap.csv");
        }
    }
}

void append(CorrelationTable& into, const CorrelationTable& from) {
    into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
    into.notes.insert(into.notes.end(), from.notes.begin(), from.notes.end());
}

void run_correlate(const PipelineConfig& c, RunLog& rl, std::ostream* log) {
    const auto cohort = load_generated(c);
    const auto root = stage_dir(c, Stage::Correlate);
    std::map<std::string, std::vector<int>> top_lists;
    auto top = text::open_output(root / "top.csv", preamble(c, Stage::Correlate));
    top << "comparison,rank,region,abs_r,p\n";
    for (const auto& cmp : c.comparisons) {
        say(log, "correlate " + cmp.name);
        const auto d = load_comparison_inputs(c, cohort, cmp);
        CorrelationTable pooled, stratified, relevant;
        for (const auto& e : d.embeddings) {
            const auto t = correlate_embedding_regions(e, d.profiles, d.labels, false);
            append(pooled, t);
            append(stratified, correlate_embedding_regions(e, d.profiles, d.labels, true));
            append(relevant, correct_table(t, CorrectionMode::Sar, e, d.profiles, d.labels, c.alpha, c.bound.delta));
        }
        const auto dir = root / cmp.name;
        fs::create_directories(dir);
        write_correlation_csv(pooled, dir / "pooled.csv", preamble(c, Stage::Correlate));
        write_correlation_csv(stratified, dir / "stratified.csv", preamble(c, Stage::Correlate));
        write_correlation_csv(relevant, dir / "sar_relevant.csv", preamble(c, Stage::Correlate));
        for (const auto* f : {"pooled.csv", "stratified.csv", "sar_relevant.csv"}) rl.artifact(dir / f);
        std::size_t significant = 0;
        for (const auto& r : pooled.rows) significant += (r.defined && r.p_value < c.alpha) ? 1 : 0;
        rl.note(cmp.name + " pooled_rows=" + std::to_string(pooled.rows.size()) + " p_significant=" +
                std::to_string(significant) + " sar_relevant=" + std::to_string(relevant.rows.size()));
        const auto ranked = top_regions(pooled, c.top_n);
        auto& list = top_lists[cmp.name];
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            top << cmp.name << ',' << i + 1 << ',' << ranked[i].region << ',' << num(ranked[i].abs_r) << ','
                << num(ranked[i].p_value) << '\n';
            list.push_back(ranked[i].region);
        }
    }
    top.close();
    rl.artifact(root / "top.csv");
    if (top_lists.size() >= 2) {
        write_overlap_csv(overlap_report(top_lists), root / "overlap.csv", preamble(c, Stage::Correlate));
        rl.artifact(root / "overlap.csv");
    } else {
        rl.note("overlap report skipped: fewer than 2 comparisons");
    }
}

void run_shap(const PipelineConfig& c, RunLog& rl, std::ostream* log) {
    const auto cohort = load_generated(c);
    for (const auto& cmp : c.comparisons) {
        const auto sub = balanced_subset(cohort, class_set(cmp), subset_seed(c));
        const auto params = load_trained(c, cmp);
        const auto errors = total_reconstruction_error(sub, params);
        const auto prof = build_region_profiles(sub);
        const auto labels = sub.labels();
        const auto dir = stage_dir(c, Stage::Shap) / cmp.name;
        fs::create_directories(dir);
        std::vector<ShapResult> results;
        for (auto label : cmp.classes) {
            std::vector<Eigen::Index> rows;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] == label) rows.push_back(static_cast<Eigen::Index>(i));
            }
            Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), prof.cols());
            std::vector<double> y;
            std::vector<std::string> ids;
            for (std::size_t k = 0; k < rows.size(); ++k) {
                x.row(static_cast<Eigen::Index>(k)) = prof.values.row(rows[k]);
                y.push_back(errors[static_cast<std::size_t>(rows[k])]);
                ids.push_back(prof.subject_ids[static_cast<std::size_t>(rows[k])]);
            }
            say(log, "shap " + cmp.name + ": " + std::string(class_name(label)) + " (" + std::to_string(rows.size()) +
                         " subjects)");
            auto r = explain_class(x, y, ids, prof.region_ids, label, c.forest);
            const auto map_path = dir / ("map_" + std::string(class_name(label)) + ".lsvol");
            save_volume(build_shap_volume(r.importance.normalized, sub.atlas), map_path);
            rl.artifact(map_path);
            rl.note(cmp.name + " " + std::string(class_name(label)) + " forest=" + hex64(r.forest_hash) +
                    " max_local_accuracy_error=" + num(r.max_local_accuracy_error));
            results.push_back(std::move(r));
        }
        write_shap_csv(results, dir / "shap.csv", preamble(c, Stage::Shap));
        write_importance_csv(results, dir / "importance.csv", preamble(c, Stage::Shap));
        rl.artifact(dir / "shap.csv");
        rl.artifact(dir / "importance.csv");
    }
}

void run_lrcp(const PipelineConfig& c, RunLog& rl, std::ostream* log) {
    const auto cohort = load_generated(c);
    const auto opt = lrcp_options(c);
    const auto root = stage_dir(c, Stage::Lrcp);
    fs::create_directories(root / "maps");
    LRCPGrid all;
    for (const auto& cmp : c.comparisons) {
        say(log, "lrcp " + cmp.name);
        const auto d = load_comparison_inputs(c, cohort, cmp);
        auto g = lrcp_grid(d.embeddings, d.profiles, d.labels, {cmp}, opt);
        if (all.comparisons.empty()) {
            all = std::move(g);
        } else {
            if (g.methods != all.methods || g.layers != all.layers || g.region_ids != all.region_ids) {
                throw DependencyError("embeddings of " + cmp.name + " cover different methods or layers");
            }
            all.comparisons.push_back(cmp.name);
            all.cells.insert(all.cells.end(), g.cells.begin(), g.cells.end());
        }
    }
    write_grid_csv(all, root / "grid.csv", preamble(c, Stage::Lrcp));
    write_summary_csv(summary_counts(all), root / "summary.csv", preamble(c, Stage::Lrcp));
    rl.artifact(root / "grid.csv");
    rl.artifact(root / "summary.csv");
    for (const auto& cmp : all.comparisons) {
        for (auto m : c.map_methods) {
            if (std::find(all.methods.begin(), all.methods.end(), m) == all.methods.end()) continue;
            for (auto layer : all.layers) {
                for (std::size_t comp = 0; comp < kComponents; ++comp) {
                    const auto p = root / "maps" /
                                   (cmp + "_" + std::string(method_name(m)) + "_L" + std::to_string(layer) + "_D" +
                                    std::to_string(comp) + ".lsvol");
                    save_volume(accuracy_map(all, cmp, m, layer, comp, cohort.atlas), p);
                    rl.artifact(p);
                }
            }
        }
    }
}

struct CsvFile {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(const fs::path& p) {
    std::istringstream in(read_text(p));
    CsvFile f;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (f.header.empty()) {
            f.header = split(line, ',');
        } else {
            f.rows.push_back(split(line, ','));
            if (f.rows.back().size() != f.header.size()) throw FormatError(p.string() + ": ragged row '" + line + "'");
        }
    }
    if (f.header.empty()) throw FormatError(p.string() + ": no header");
    return f;
}

std::string fixed(const std::string& v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, std::stod(v));
    return buf;
}

void markdown_table(std::ostream& out, const std::vector<std::string>& header,
                    const std::vector<std::vector<std::string>>& rows) {
    out << "| " << join(header, '|') << " |\n|";
    for (std::size_t i = 0; i < header.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& r : rows) out << "| " << join(r, '|') << " |\n";
    out << '\n';
}

void run_report(const PipelineConfig& c, RunLog& rl, std::ostream* log) {
    say(log, "report");
    const auto dir = stage_dir(c, Stage::Report);
    const auto pre = preamble(c, Stage::Report);
    {
        auto out = text::open_output(dir / "config.txt", pre);
        for (const auto& l : config_lines(c)) out << l << '\n';
    }
    const auto corr = stage_dir(c, Stage::Correlate);
    const auto lrcp = stage_dir(c, Stage::Lrcp);
    fs::copy_file(lrcp / "summary.csv", dir / "summary.csv");
    fs::copy_file(corr / "top.csv", dir / "top_regions.csv");
    const bool has_overlap = fs::exists(corr / "overlap.csv");
    if (has_overlap) fs::copy_file(corr / "overlap.csv", dir / "overlap.csv");

    std::vector<std::vector<std::string>> importance;
    {
        auto out = text::open_output(dir / "importance.csv", pre);
        out << "comparison,class,region,s_r,s_tilde\n";
        for (const auto& cmp : c.comparisons) {
            const auto f = read_csv(stage_dir(c, Stage::Shap) / cmp.name / "importance.csv");
            for (const auto& r : f.rows) {
                out << cmp.name << ',' << join(r, ',') << '\n';
                auto row = r;
                row.insert(row.begin(), cmp.name);
                importance.push_back(std::move(row));
            }
        }
    }
    {
        auto out = text::open_output(dir / "provenance.txt", pre);
        for (auto s : kAllStages) {
            if (s == Stage::Report) continue;
            out << "[" << stage_name(s) << "]\n" << read_text(stage_dir(c, s) / "run.log") << '\n';
        }
    }

    auto md = text::open_output(dir / "report.md", {});
    md << "# Latent-space analysis report\n\n";
    md << "config_hash=" << hex64(stage_hash(c, Stage::Report)) << ", seed=" << c.seed << "\n\n";

    md << "## LRCP summary counts\n\n";
    const auto summary = read_csv(dir / "summary.csv");
    markdown_table(md, summary.header, summary.rows);

    md << "## Top regions by |r| per comparison\n\n";
    const auto top = read_csv(dir / "top_regions.csv");
    std::vector<std::vector<std::string>> top_rows;
    for (const auto& r : top.rows) top_rows.push_back({r[0], r[1], r[2], fixed(r[3], 4), r[4]});
    markdown_table(md, top.header, top_rows);

    if (has_overlap) {
        md << "## Overlap of top regions between comparisons\n\n";
        const auto ov = read_csv(dir / "overlap.csv");
        std::map<std::pair<std::string, std::string>, std::vector<std::string>> grouped;
        std::vector<std::pair<std::string, std::string>> order;
        for (const auto& r : ov.rows) {
            const auto key = std::make_pair(r[0], r[1]);
            if (!grouped.count(key)) order.push_back(key);
            grouped[key].push_back(r[2]);
        }
        std::vector<std::vector<std::string>> rows;
        for (const auto& k : order) rows.push_back({k.first, k.second, join(grouped[k], ' ')});
        markdown_table(md, {"comparison_a", "comparison_b", "shared regions"}, rows);
    }

    md << "## Most important regions for reconstruction error (SHAP)\n\n";
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<double, std::string>>> by_class;
    std::vector<std::pair<std::string, std::string>> class_order;
    for (const auto& r : importance) {
        const auto key = std::make_pair(r[0], r[1]);
        if (!by_class.count(key)) class_order.push_back(key);
        by_class[key].push_back({std::stod(r[4]), r[2]});
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto& k : class_order) {
        auto v = by_class[k];
        std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        std::vector<std::string> best;
        for (std::size_t i = 0; i < std::min<std::size_t>(5, v.size()); ++i) best.push_back(v[i].second);
        rows.push_back({k.first, k.second, join(best, ' ')});
    }
    markdown_table(md, {"comparison", "class", "top regions by s_tilde"}, rows);
    md.close();

    for (const auto* f : {"config.txt", "summary.csv", "top_regions.csv", "importance.csv", "provenance.txt",
                          "report.md"}) {
        rl.artifact(dir / f);
    }
    if (has_overlap) rl.artifact(dir / "overlap.csv");
}

}  // namespace

PipelineConfig default_pipeline_config() {
    PipelineConfig c;
    c.phantom.dims = {32, 32, 32};
    c.phantom.region_count = 32;
    c.phantom.class_counts = {{ClassLabel::NOR, 30}, {ClassLabel::MCI, 30}, {ClassLabel::MCIc, 30}, {ClassLabel::AD, 30}};
    for (std::uint32_t r : {3u, 8u, 14u, 21u, 27u}) {
        c.phantom.effects.push_back({r, ClassLabel::AD, -0.15});
        c.phantom.effects.push_back({r, ClassLabel::MCIc, -0.08});
    }
    for (std::uint32_t r : {3u, 8u}) c.phantom.effects.push_back({r, ClassLabel::MCI, -0.03});
    c.phantom.severity_spread = 0.5;
    return c;
}

PipelineConfig parse_pipeline_config(std::string_view text, PipelineConfig base) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = text.find('\n', start);
        const auto raw = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
        ++line_no;
        const auto line = trim(raw.substr(0, raw.find('#')));
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
            }
            const auto key = trim(std::string_view(line).substr(0, eq));
            const auto value = trim(std::string_view(line).substr(eq + 1));
            const auto it = setters().find(key);
            if (it == setters().end()) {
                throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
            }
            it->second(base, key, value);
        }
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return base;
}

PipelineConfig load_pipeline_config(const fs::path& path, PipelineConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_pipeline_config(ss.str(), std::move(base));
}

void finalize_config(PipelineConfig& c) {
    c.phantom.seed = c.seed;
    c.train.seed = derive_seed(c.seed, kTrainStream);
    c.projection.seed = derive_seed(c.seed, kProjectionStream);
    c.projection.tsne.seed = c.projection.seed;
    c.projection.umap.seed = c.projection.seed;
    c.forest.seed = derive_seed(c.seed, kForestStream);
    if (c.comparisons.empty()) throw ConfigError("comparisons list is empty");
    for (const auto& cmp : c.comparisons) {
        for (auto label : cmp.classes) {
            const auto it = c.phantom.class_counts.find(label);
            if (it == c.phantom.class_counts.end() || it->second == 0) {
                throw ConfigError("comparison " + cmp.name + " references class " + std::string(class_name(label)) +
                                  ", which the phantom does not generate");
            }
        }
    }
    for (const auto& e : c.phantom.effects) {
        if (!c.phantom.class_counts.count(e.label)) {
            throw ConfigError("effect on region " + std::to_string(e.region) + " targets absent class " +
                              std::string(class_name(e.label)));
        }
    }
    if (c.train.batch_size == 0 || c.train.max_epochs == 0) throw ConfigError("train.batch and train.epochs must be positive");
    if (c.train.patience > c.train.max_epochs) throw ConfigError("train.patience must not exceed train.epochs");
    if (c.forest.n_trees == 0) throw ConfigError("shap.trees must be positive");
}

std::vector<std::string> config_lines(const PipelineConfig& c) {
    std::vector<std::string> counts, effects, cmps;
    for (const auto& [label, n] : c.phantom.class_counts) counts.push_back(std::string(class_name(label)) + ":" + std::to_string(n));
    for (const auto& e : c.phantom.effects) {
        effects.push_back(std::string(class_name(e.label)) + ":" + std::to_string(e.region) + ":" + num(e.shift));
    }
    for (const auto& cmp : c.comparisons) cmps.push_back(cmp.name);
    const auto& d = c.phantom.dims;
    return {
        "seed=" + std::to_string(c.seed),
        "phantom.dims=" + std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z),
        "phantom.regions=" + std::to_string(c.phantom.region_count),
        "phantom.counts=" + join(counts, ','),
        "phantom.effects=" + (effects.empty() ? std::string("none") : join(effects, ',')),
        "phantom.noise=" + num(c.phantom.noise_sigma),
        "phantom.smoothness=" + num(c.phantom.smoothness),
        "phantom.severity_spread=" + num(c.phantom.severity_spread),
        "comparisons=" + join(cmps, ','),
        "train.lr=" + num(c.train.learning_rate),
        "train.epochs=" + std::to_string(c.train.max_epochs),
        "train.patience=" + std::to_string(c.train.patience),
        "train.batch=" + std::to_string(c.train.batch_size),
        "train.loss=" + std::string(loss_name(c.train.loss_kind)),
        "train.alpha=" + num(c.train.alpha),
        "projection.methods=" + methods_text(c.methods),
        "projection.bootstrap=" + std::to_string(c.bootstrap_resamples),
        "projection.tsne.perplexity=" + num(c.projection.tsne.perplexity),
        "projection.tsne.iterations=" + std::to_string(c.projection.tsne.iterations),
        "projection.tsne.learning_rate=" + num(c.projection.tsne.learning_rate),
        "projection.umap.neighbors=" + std::to_string(c.projection.umap.n_neighbors),
        "projection.umap.min_dist=" + num(c.projection.umap.min_dist),
        "projection.umap.epochs=" + std::to_string(c.projection.umap.epochs),
        "correlate.top_n=" + std::to_string(c.top_n),
        "shap.trees=" + std::to_string(c.forest.n_trees),
        "shap.depth=" + std::to_string(c.forest.max_depth),
        "shap.min_leaf=" + std::to_string(c.forest.min_leaf),
        "bounds.delta=" + num(c.bound.delta),
        "bounds.complexity=" + num(c.bound.complexity),
        "bounds.dropout=" + num(c.bound.dropout),
        "lrcp.alpha=" + num(c.alpha),
        "lrcp.quadratic=" + std::string(c.quadratic ? "true" : "false"),
        "lrcp.maps=" + methods_text(c.map_methods),
    };
}

std::string_view stage_name(Stage stage) {
    switch (stage) {
        case Stage::Generate: return "generate";
        case Stage::Train: return "train";
        case Stage::Embed: return "embed";
        case Stage::Correlate: return "correlate";
        case Stage::Shap: return "shap";
        case Stage::Lrcp: return "lrcp";
        case Stage::Report: return "report";
    }
    return "?";
}

std::vector<Stage> stage_dependencies(Stage stage) {
    switch (stage) {
        case Stage::Generate: return {};
        case Stage::Train: return {Stage::Generate};
        case Stage::Embed: return {Stage::Train};
        case Stage::Correlate: return {Stage::Embed};
        case Stage::Shap: return {Stage::Train};
        case Stage::Lrcp: return {Stage::Embed};
        case Stage::Report: return {Stage::Correlate, Stage::Shap, Stage::Lrcp};
    }
    return {};
}

std::uint64_t stage_hash(const PipelineConfig& config, Stage stage) {
    static const std::map<Stage, std::vector<std::string>> own = {
        {Stage::Generate, {"seed=", "phantom."}},
        {Stage::Train, {"train.", "comparisons="}},
        {Stage::Embed, {"projection."}},
        {Stage::Correlate, {"correlate.", "bounds.delta=", "lrcp.alpha="}},
        {Stage::Shap, {"shap."}},
        {Stage::Lrcp, {"bounds.", "lrcp."}},
        {Stage::Report, {}},
    };
    std::set<Stage> closure{stage};
    std::vector<Stage> todo{stage};
    while (!todo.empty()) {
        const auto s = todo.back();
        todo.pop_back();
        for (auto d : stage_dependencies(s)) {
            if (closure.insert(d).second) todo.push_back(d);
        }
    }
    std::vector<std::string> prefixes;
    for (auto s : closure) prefixes.insert(prefixes.end(), own.at(s).begin(), own.at(s).end());
    Fnv1a h;
    h.add(stage_name(stage));
    for (const auto& line : config_lines(config)) {
        for (const auto& p : prefixes) {
            if (line.rfind(p, 0) == 0) {
                h.add(line);
                h.add(std::string_view("\n"));
                break;
            }
        }
    }
    return h.value();
}

Cohort load_generated_cohort(const PipelineConfig& config) {
    require_fresh(config, Stage::Train);
    return load_generated(config);
}

ComparisonInputs load_comparison_inputs(const PipelineConfig& config, const Cohort& cohort, const Comparison& cmp) {
    const auto sub = balanced_subset(cohort, class_set(cmp), subset_seed(config));
    ComparisonInputs d;
    d.embeddings = read_embeddings_csv(stage_dir(config, Stage::Embed) / cmp.name / "embeddings.csv");
    d.profiles = build_region_profiles(sub);
    d.labels = sub.labels();
    for (const auto& e : d.embeddings) {
        if (e.subject_ids != d.profiles.subject_ids) {
            throw DependencyError("embeddings of " + cmp.name + " do not match the generated cohort");
        }
    }
    return d;
}

LrcpOptions lrcp_options(const PipelineConfig& config) {
    LrcpOptions opt;
    opt.bound = config.bound;
    opt.alpha = config.alpha;
    opt.quadratic = config.quadratic;
    opt.seed = subset_seed(config);
    return opt;
}

Eigen::MatrixXd activation_matrix(const std::vector<ActivationSet>& activations, std::size_t layer) {
    if (layer < 1 || layer > kEncoderLayers) throw ConfigError("layer must be 1..3");
    if (activations.empty()) throw ConfigError("no activations");
    const auto& first = activations.front().layers[layer - 1];
    Eigen::MatrixXd x(static_cast<Eigen::Index>(activations.size()), static_cast<Eigen::Index>(first.size()));
    for (std::size_t i = 0; i < activations.size(); ++i) {
        const auto& a = activations[i].layers[layer - 1];
        if (a.size() != first.size()) throw ShapeError("activation sizes differ between subjects");
        for (std::size_t j = 0; j < a.size(); ++j) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[j];
        }
    }
    return x;
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw DependencyError("output directory " + dir.string() + " is locked by another run (" + path_.string() +
                              "); remove the lock file if no run is active");
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

OutputLock::~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

StageOutcome run_stage(const PipelineConfig& config, Stage stage, bool force, std::ostream* log) {
    StageOutcome outcome{stage, false, stage_hash(config, stage)};
    const auto dir = stage_dir(config, stage);
    require_fresh(config, stage);
    if (!force && logged_hash(dir) == outcome.hash) {
        say(log, std::string(stage_name(stage)) + ": up to date");
        outcome.skipped = true;
        return outcome;
    }
    fs::remove_all(dir);
    fs::create_directories(dir);
    RunLog rl(config, stage);
    switch (stage) {
        case Stage::Generate: run_generate(config, rl, log); break;
        case Stage::Train: run_train(config, rl, log); break;
        case Stage::Embed: run_embed(config, rl, log); break;
        case Stage::Correlate: run_correlate(config, rl, log); break;
        case Stage::Shap: run_shap(config, rl, log); break;
        case Stage::Lrcp: run_lrcp(config, rl, log); break;
        case Stage::Report: run_report(config, rl, log); break;
    }
    rl.write();
    return outcome;
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, bool force, std::ostream* log) {
    std::vector<StageOutcome> out;
    for (auto s : kAllStages) out.push_back(run_stage(config, s, force, log));
    return out;
}

}  // namespace latentscope
