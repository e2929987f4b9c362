#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dn2n/pipeline.hpp"

using namespace dn2n;

int main(int argc, char** argv) {
    CLI::App app{"dn2n: generalizable text-driven 3D editing on synthetic bench scenes"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool force = false, resume = false, regen_once = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "pipeline config JSON")->required();
        sub->add_option("--seed", seed, "override the command's primary seed");
        sub->add_option("--out", out_dir, "override out_dir from the config");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate synthetic scene bundles");
    add_common(gen);
    gen->add_flag("--force", force, "overwrite an existing scenes directory");

    CLI::App* train = app.add_subcommand("train", "train the generalizable model");
    add_common(train);
    train->add_flag("--resume", resume, "continue from the latest checkpoint");

    CLI::App* edit = app.add_subcommand("edit", "edit a scene and render novel views");
    add_common(edit);
    edit->add_flag("--regen-once", regen_once,
                   "re-render discarded views once when more than half are discarded");

    CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints on held-out scenes");
    add_common(eval);

    CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate the ablation variants");
    add_common(ablate);

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig config = load_pipeline_config(config_path);
        if (out_dir) config.out_dir = *out_dir;
        if (gen->parsed()) {
            if (seed) config.gen.seed = *seed;
            return cmd_gen(config, force);
        }
        if (train->parsed()) {
            if (seed) config.train.seed = *seed;
            return cmd_train(config, resume);
        }
        if (edit->parsed()) {
            if (seed) config.edit.seed = *seed;
            return cmd_edit(config, regen_once);
        }
        if (eval->parsed()) return cmd_eval(config);
        if (ablate->parsed()) {
            if (seed) config.train.seed = *seed;
            return cmd_ablate(config);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
