#include "latentscope/error.hpp"
#include "latentscope/hash.hpp"
#include "latentscope/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace latentscope;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitNumeric = 4;

int fail(int code, const char* kind, const std::exception& e) {
    std::cerr << "latentscope: " << kind << ": " << e.what() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-space analysis pipeline on seeded phantom cohorts"};
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    app.add_option("--config", config_path, "key = value settings file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed (overrides the config)");
    app.add_option("--out", out, "output directory (overrides the config)");
    app.add_flag("--stage-force", force, "rerun stages that are already up to date");
    app.require_subcommand(1, 1);

    std::vector<std::pair<CLI::App*, std::optional<Stage>>> commands;
    for (auto s : kAllStages) {
        const std::string name(stage_name(s));
        commands.emplace_back(app.add_subcommand(name, "run the " + name + " stage"), s);
    }
    commands.emplace_back(app.add_subcommand("run", "run every stage in order"), std::nullopt);
    auto* show = app.add_subcommand("config", "print the effective settings and stage hashes");
    for (auto& [cmd, stage] : commands) cmd->fallthrough();
    show->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        auto config = default_pipeline_config();
        if (!config_path.empty()) config = load_pipeline_config(config_path, config);
        if (seed) config.seed = *seed;
        if (!out.empty()) config.out = out;
        finalize_config(config);

        if (show->parsed()) {
            for (const auto& line : config_lines(config)) std::cout << line << '\n';
            for (auto s : kAllStages) std::cout << "# " << stage_name(s) << " hash " << hex64(stage_hash(config, s)) << '\n';
            return 0;
        }
        OutputLock lock(config.out);
        for (auto& [cmd, stage] : commands) {
            if (!cmd->parsed()) continue;
            if (stage) {
                run_stage(config, *stage, force, &std::cerr);
            } else {
                run_pipeline(config, force, &std::cerr);
            }
        }
        return 0;
    } catch (const ConfigError& e) {
        return fail(kExitConfig, "config error", e);
    } catch (const DependencyError& e) {
        return fail(kExitDependency, "dependency error", e);
    } catch (const FormatError& e) {
        return fail(kExitDependency, "unreadable artifact", e);
    } catch (const NumericError& e) {
        return fail(kExitNumeric, "numeric failure", e);
    } catch (const UndefinedStatistic& e) {
        return fail(kExitNumeric, "numeric failure", e);
    } catch (const ShapeError& e) {
        return fail(kExitNumeric, "shape mismatch", e);
    } catch (const std::exception& e) {
        return fail(1, "error", e);
    }
}
