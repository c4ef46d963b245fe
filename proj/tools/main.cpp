#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cpcl/commands.hpp"
#include "cpcl/config.hpp"
#include "cpcl/errors.hpp"

using namespace cpcl;

int main(int argc, char** argv) {
    CLI::App app{"cpclseg: semi-supervised volumetric segmentation with cyclic prototype "
                 "consistency"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer("config keys (key = default):\n" + config_reference());

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    app.add_option("--config", config_path, "key = value config file");
    auto* seed_opt = app.add_option("--seed", seed, "override the configured seed");
    auto* out_opt = app.add_option("--out", out_dir, "override the configured out_dir");

    app.add_subcommand("synth", "generate the synthetic dataset, split, and manifest");
    app.add_subcommand("train", "train the configured mode; logs and checkpoints to out_dir");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    std::string ckpt;
    bool dump_probs = false;
    eval->add_option("checkpoint", ckpt, "checkpoint file to score")->required();
    eval->add_flag("--dump-probs", dump_probs, "also write per-case probability volumes");

    auto* compare = app.add_subcommand("compare", "paired t-test between two checkpoints");
    std::string ckpt_a, ckpt_b;
    compare->add_option("checkpoint_a", ckpt_a, "first checkpoint")->required();
    compare->add_option("checkpoint_b", ckpt_b, "second checkpoint")->required();

    auto* ablate = app.add_subcommand("ablate", "train and score the ablation grid");
    std::string sweep = "both";
    ablate->add_option("--sweep", sweep, "modes, beta, or both")
        ->check(CLI::IsMember({"modes", "beta", "both"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed_opt->count() > 0) cfg.train.seed = seed;
        if (out_opt->count() > 0) cfg.out_dir = out_dir;
        cfg.validate();

        if (app.got_subcommand("synth")) {
            cmd_synth(cfg);
        } else if (app.got_subcommand("train")) {
            cmd_train(cfg);
        } else if (app.got_subcommand("eval")) {
            cmd_eval(cfg, ckpt, dump_probs);
        } else if (app.got_subcommand("compare")) {
            cmd_compare(cfg, ckpt_a, ckpt_b);
        } else {
            cmd_ablate(cfg, sweep == "modes" || sweep == "both",
                       sweep == "beta" || sweep == "both");
        }
        return 0;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
