#include "cpcl/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "cpcl/checkpoint.hpp"
#include "cpcl/errors.hpp"
#include "cpcl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cpcl {

namespace {

Dataset load_data(const RunConfig& cfg) {
    return load_dataset((fs::path(cfg.data_dir) / "manifest.jsonl").string());
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(prec) << v;
    return out.str();
}

std::string mean_std(const MetricSummary& s) { return fmt(s.mean) + " +- " + fmt(s.stddev); }

json summary_json(const MetricSummary& s) {
    return json{{"mean", s.mean}, {"stddev", s.stddev}};
}

json report_json(const MetricsReport& r) {
    json cases = json::array();
    for (const auto& c : r.cases) {
        cases.push_back({{"id", c.id},
                         {"dice", c.dice},
                         {"jaccard", c.jaccard},
                         {"hd95", c.hd95},
                         {"asd", c.asd},
                         {"surface_undefined", c.surface_undefined}});
    }
    return json{{"cases", cases},
                {"dice", summary_json(r.dice)},
                {"jaccard", summary_json(r.jaccard)},
                {"hd95", summary_json(r.hd95)},
                {"asd", summary_json(r.asd)}};
}

void write_json(const json& j, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::open_failed, path.string() + ": cannot open");
    out << j.dump(2) << "\n";
    if (!out) throw IoError(IoError::Kind::write_failed, path.string() + ": write failed");
}

void print_report(const MetricsReport& r) {
    std::cout << std::left << std::setw(16) << "case" << std::right << std::setw(9) << "dice"
              << std::setw(9) << "jaccard" << std::setw(9) << "hd95" << std::setw(9) << "asd"
              << "\n";
    for (const auto& c : r.cases) {
        std::cout << std::left << std::setw(16) << c.id << std::right << std::setw(9)
                  << fmt(c.dice) << std::setw(9) << fmt(c.jaccard) << std::setw(9)
                  << fmt(c.hd95, 2) << std::setw(9) << fmt(c.asd, 2)
                  << (c.surface_undefined ? "  (no surface)" : "") << "\n";
    }
    std::cout << std::left << std::setw(16) << "mean" << std::right << std::setw(9)
              << fmt(r.dice.mean) << std::setw(9) << fmt(r.jaccard.mean) << std::setw(9)
              << fmt(r.hd95.mean, 2) << std::setw(9) << fmt(r.asd.mean, 2) << "\n";
    std::cout << std::left << std::setw(16) << "std" << std::right << std::setw(9)
              << fmt(r.dice.stddev) << std::setw(9) << fmt(r.jaccard.stddev) << std::setw(9)
              << fmt(r.hd95.stddev, 2) << std::setw(9) << fmt(r.asd.stddev, 2) << "\n";
}

const char* stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "ns";
}

MetricsReport eval_checkpoint(const RunConfig& cfg, const Dataset& data,
                              const std::string& checkpoint, const std::string& dump_dir) {
    const auto cases = data.pool(data.split.test);
    if (cases.empty()) throw ConfigError("test split is empty; re-run synth with n_test >= 1");
    const UNet net{UNetConfig{}};
    const ModelState state = load_checkpoint(checkpoint);
    return evaluate_cases(net, state.student, cases, cfg.eval_patch, cfg.eval_stride, dump_dir);
}

}  // namespace

void cmd_synth(const RunConfig& cfg) {
    const int count = cfg.n_train + cfg.n_val + cfg.n_test;
    auto samples = generate_synthetic(cfg.train.seed, count, cfg.dims);
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.id);
    const DatasetSplit split =
        make_split(ids, cfg.n_train, cfg.n_val, cfg.n_test, cfg.labeled_fraction);
    write_dataset(samples, split, cfg.data_dir);
    std::cout << "synth: " << count << " volumes (" << cfg.dims[0] << "x" << cfg.dims[1] << "x"
              << cfg.dims[2] << ") -> " << cfg.data_dir << "  [" << split.train_labeled.size()
              << " labeled + " << split.train_unlabeled.size() << " unlabeled train, "
              << split.val.size() << " val, " << split.test.size() << " test]\n";
}

void cmd_train(const RunConfig& cfg) {
    const Dataset data = load_data(cfg);
    const UNet net{UNetConfig{}};
    std::cout << "train: mode=" << to_string(cfg.train.mode) << " seed=" << cfg.train.seed
              << " t_max=" << cfg.train.t_max << " patch=" << cfg.train.patch << " -> "
              << cfg.out_dir << "\n";
    run_training(net, cfg.train, data, cfg.out_dir, cfg.val_every, cfg.checkpoint_every);
    std::cout << "train: finished, checkpoint at "
              << (fs::path(cfg.out_dir) / "final.ckpt").string() << "\n";
}

MetricsReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint, bool dump_probs) {
    const Dataset data = load_data(cfg);
    std::string dump_dir;
    if (dump_probs) {
        dump_dir = (fs::path(cfg.out_dir) / "probs").string();
        fs::create_directories(dump_dir);
    }
    const MetricsReport report = eval_checkpoint(cfg, data, checkpoint, dump_dir);
    print_report(report);
    if (dump_probs) std::cout << "probability volumes in " << dump_dir << "\n";

    json j = report_json(report);
    j["checkpoint"] = checkpoint;
    j["patch"] = cfg.eval_patch;
    j["stride"] = cfg.eval_stride;
    write_json(j, fs::path(cfg.out_dir) / "metrics.json");
    return report;
}

CompareReport cmd_compare(const RunConfig& cfg, const std::string& checkpoint_a,
                          const std::string& checkpoint_b) {
    const Dataset data = load_data(cfg);
    CompareReport rep;
    rep.a = eval_checkpoint(cfg, data, checkpoint_a, "");
    rep.b = eval_checkpoint(cfg, data, checkpoint_b, "");

    auto column = [](const MetricsReport& r, auto pick) {
        std::vector<double> v;
        v.reserve(r.cases.size());
        for (const auto& c : r.cases) v.push_back(pick(c));
        return v;
    };
    auto paired = [&](auto pick) {
        return paired_t_test(column(rep.a, pick), column(rep.b, pick));
    };
    rep.dice = paired([](const CaseMetrics& c) { return c.dice; });
    rep.jaccard = paired([](const CaseMetrics& c) { return c.jaccard; });
    rep.hd95 = paired([](const CaseMetrics& c) { return c.hd95; });
    rep.asd = paired([](const CaseMetrics& c) { return c.asd; });

    std::cout << "A = " << checkpoint_a << "\nB = " << checkpoint_b << "\n";
    std::cout << std::left << std::setw(9) << "metric" << std::setw(19) << "A" << std::setw(19)
              << "B" << std::right << std::setw(9) << "t" << std::setw(9) << "p"
              << "  sig\n";
    auto row = [&](const char* name, const MetricSummary& a, const MetricSummary& b,
                   const TTestResult& t) {
        std::cout << std::left << std::setw(9) << name << std::setw(19) << mean_std(a)
                  << std::setw(19) << mean_std(b) << std::right << std::setw(9) << fmt(t.t, 3)
                  << std::setw(9) << fmt(t.p, 4) << "  " << stars(t.p) << "\n";
    };
    row("dice", rep.a.dice, rep.b.dice, rep.dice);
    row("jaccard", rep.a.jaccard, rep.b.jaccard, rep.jaccard);
    row("hd95", rep.a.hd95, rep.b.hd95, rep.hd95);
    row("asd", rep.a.asd, rep.b.asd, rep.asd);

    auto ttest_json = [](const TTestResult& t) {
        return json{{"t", t.t}, {"p", t.p}, {"df", t.df}};
    };
    json j;
    j["checkpoint_a"] = checkpoint_a;
    j["checkpoint_b"] = checkpoint_b;
    j["a"] = report_json(rep.a);
    j["b"] = report_json(rep.b);
    j["paired_t"] = {{"dice", ttest_json(rep.dice)},
                     {"jaccard", ttest_json(rep.jaccard)},
                     {"hd95", ttest_json(rep.hd95)},
                     {"asd", ttest_json(rep.asd)}};
    write_json(j, fs::path(cfg.out_dir) / "compare.json");
    return rep;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, bool sweep_modes, bool sweep_beta) {
    if (!sweep_modes && !sweep_beta) throw ConfigError("ablate: nothing to sweep");
    const Dataset data = load_data(cfg);
    const UNet net{UNetConfig{}};

    struct Variant {
        std::string label;
        TrainMode mode;
        float beta;
    };
    std::vector<Variant> variants;
    if (sweep_modes) {
        for (TrainMode m : {TrainMode::supervised, TrainMode::mt, TrainMode::fpcl, TrainMode::bpcl,
                            TrainMode::mt_fpcl, TrainMode::mt_bpcl, TrainMode::mt_cpcl,
                            TrainMode::cpcl}) {
            variants.push_back({to_string(m), m, cfg.train.beta});
        }
    }
    if (sweep_beta) {
        // The beta sweep needs a mode where the backward term participates.
        const TrainMode base =
            mode_uses_backward(cfg.train.mode) ? cfg.train.mode : TrainMode::cpcl;
        for (float b : {1.0f, 5.0f, 10.0f, 15.0f, 20.0f}) {
            variants.push_back({"beta=" + fmt(b, 0), base, b});
        }
    }

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        RunConfig sub = cfg;
        sub.train.mode = v.mode;
        sub.train.beta = v.beta;
        sub.out_dir = (fs::path(cfg.out_dir) / v.label).string();
        std::cout << "ablate: " << v.label << " (mode=" << to_string(v.mode) << ", beta=" << v.beta
                  << ")\n";
        run_training(net, sub.train, data, sub.out_dir, sub.val_every, sub.checkpoint_every);
        const MetricsReport r = eval_checkpoint(
            sub, data, (fs::path(sub.out_dir) / "final.ckpt").string(), "");
        rows.push_back({v.label, to_string(v.mode), v.beta, r.dice, r.jaccard, r.hd95, r.asd});
    }

    std::cout << std::left << std::setw(12) << "variant" << std::setw(19) << "dice"
              << std::setw(19) << "jaccard" << std::setw(19) << "hd95" << std::setw(19) << "asd"
              << "\n";
    json table = json::array();
    for (const auto& r : rows) {
        std::cout << std::left << std::setw(12) << r.variant << std::setw(19) << mean_std(r.dice)
                  << std::setw(19) << mean_std(r.jaccard) << std::setw(19) << mean_std(r.hd95)
                  << std::setw(19) << mean_std(r.asd) << "\n";
        table.push_back({{"variant", r.variant},
                         {"mode", r.mode},
                         {"beta", r.beta},
                         {"dice", summary_json(r.dice)},
                         {"jaccard", summary_json(r.jaccard)},
                         {"hd95", summary_json(r.hd95)},
                         {"asd", summary_json(r.asd)}});
    }
    write_json(table, fs::path(cfg.out_dir) / "ablation.json");
    return rows;
}

}  // namespace cpcl
