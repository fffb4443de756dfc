// factlab command-line driver: runs the experiment pipeline stage by stage or
// end to end. Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "factlab/common.hpp"
#include "factlab/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    bool force = false;
    int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "pipeline config file (JSON)")->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_flag("--force", args.force, "recompute even when inputs are unchanged");
    cmd->add_option("--seed", args.seed_override, "override the config seed");
}

factlab::PipelineConfig load_config(const CommonArgs& args) {
    auto cfg = factlab::PipelineConfig::from_json_file(args.config_path);
    if (args.seed_override >= 0) cfg.seed = static_cast<uint64_t>(args.seed_override);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"factlab: counterfactual-recall laboratory for tiny transformers"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string chosen_stage;

    for (const auto& stage : factlab::pipeline_stage_names()) {
        auto* cmd = app.add_subcommand(stage, "run the '" + stage + "' stage");
        add_common(cmd, args);
        cmd->callback([&chosen_stage, stage] { chosen_stage = stage; });
    }
    auto* pipeline_cmd = app.add_subcommand("pipeline", "run all stages in order");
    add_common(pipeline_cmd, args);
    pipeline_cmd->callback([&chosen_stage] { chosen_stage = "pipeline"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const auto cfg = load_config(args);
        if (chosen_stage == "pipeline") {
            factlab::run_pipeline(cfg, args.out_dir, args.force);
        } else {
            factlab::run_stage(cfg, args.out_dir, chosen_stage, args.force);
        }
    } catch (const factlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
