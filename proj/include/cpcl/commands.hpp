#pragma once

#include <string>
#include <vector>

#include "cpcl/config.hpp"
#include "cpcl/eval.hpp"
#include "cpcl/stats.hpp"

namespace cpcl {

// Each command is a pure function of (config, input files, seed) to output
// files, plus a human-readable transcript on stdout. They throw the library
// error types; the CLI maps those to exit codes.

// Generates n_train + n_val + n_test volumes, splits them, and writes the
// dataset under data_dir.
void cmd_synth(const RunConfig& cfg);

// Trains per cfg.train into out_dir (step log, checkpoints, validation Dice).
void cmd_train(const RunConfig& cfg);

// Scores a checkpoint's student on the test split. Writes out_dir/metrics.json
// and, when dump_probs is set, per-case probability volumes to out_dir/probs.
MetricsReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint, bool dump_probs);

struct CompareReport {
    MetricsReport a;
    MetricsReport b;
    TTestResult dice, jaccard, hd95, asd;  // paired over the shared cases
};

// Evaluates two checkpoints on the same test cases and pairs them per metric.
// Writes out_dir/compare.json.
CompareReport cmd_compare(const RunConfig& cfg, const std::string& checkpoint_a,
                          const std::string& checkpoint_b);

struct AblationRow {
    std::string variant;
    std::string mode;
    float beta = 0.0f;
    MetricSummary dice, jaccard, hd95, asd;
};

// Trains and scores one run per variant: the eight-mode sweep and/or the
// beta sweep {1, 5, 10, 15, 20}. Each run lives in its own out_dir subtree,
// so a restarted sweep resumes finished variants instantly. Writes
// out_dir/ablation.json.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, bool sweep_modes, bool sweep_beta);

}  // namespace cpcl
