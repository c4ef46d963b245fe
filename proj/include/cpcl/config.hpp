#pragma once

#include <array>
#include <map>
#include <string>

#include "cpcl/trainer.hpp"

namespace cpcl {

// Everything a run needs beyond the optimizer hyperparameters: where the
// dataset lives, how it is generated and split, where outputs go, and the
// evaluation window geometry.
struct RunConfig {
    TrainConfig train;

    std::string data_dir = "data";
    std::string out_dir = "runs/default";
    std::array<int, 3> dims = {48, 48, 48};
    float labeled_fraction = 0.1f;
    int n_train = 40;
    int n_val = 4;
    int n_test = 10;

    int val_every = 100;
    int checkpoint_every = 100;
    int eval_patch = 24;
    int eval_stride = 12;

    void validate() const;
};

// Flat "key = value" lines, '#' starts a comment, blank lines ignored.
// Duplicate keys are rejected.
std::map<std::string, std::string> parse_config_file(const std::string& path);

// Applies key/value pairs on top of the defaults. Unknown keys and
// unparseable values raise ConfigError naming the key.
RunConfig run_config_from(const std::map<std::string, std::string>& kv);

RunConfig load_run_config(const std::string& path);

// One "key = default  description" line per accepted key, for --help.
std::string config_reference();

}  // namespace cpcl
