#include "cpcl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "cpcl/errors.hpp"

namespace cpcl {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
    long long out = 0;
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("config key " + key + ": expected an integer, got '" + value + "'");
    }
    return out;
}

double parse_float(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a number, got '" + value + "'");
    }
}

// "48" means cubic; otherwise three comma- or space-separated extents.
std::array<int, 3> parse_dims(const std::string& key, const std::string& value) {
    std::string v = value;
    for (auto& c : v) {
        if (c == ',') c = ' ';
    }
    std::istringstream in(v);
    std::vector<long long> parts;
    std::string tok;
    while (in >> tok) parts.push_back(parse_int(key, tok));
    if (parts.size() == 1) parts = {parts[0], parts[0], parts[0]};
    if (parts.size() != 3) {
        throw ConfigError("config key " + key + ": expected 1 or 3 extents, got '" + value + "'");
    }
    return {static_cast<int>(parts[0]), static_cast<int>(parts[1]), static_cast<int>(parts[2])};
}

struct KeySpec {
    const char* name;
    const char* fallback;  // printed default
    const char* help;
    std::function<void(RunConfig&, const std::string&)> apply;
};

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = {
        {"mode", "cpcl",
         "training mode: supervised, mt, fpcl, bpcl, cpcl, mt_fpcl, mt_bpcl, mt_cpcl",
         [](RunConfig& c, const std::string& v) { c.train.mode = parse_mode(v); }},
        {"seed", "1", "master seed for init, batching, and synthesis",
         [](RunConfig& c, const std::string& v) {
             c.train.seed = static_cast<std::uint64_t>(parse_int("seed", v));
         }},
        {"lr0", "0.01", "initial learning rate of the poly decay",
         [](RunConfig& c, const std::string& v) {
             c.train.lr0 = static_cast<float>(parse_float("lr0", v));
         }},
        {"momentum", "0.9", "SGD momentum coefficient",
         [](RunConfig& c, const std::string& v) {
             c.train.momentum = static_cast<float>(parse_float("momentum", v));
         }},
        {"weight_decay", "0.0001", "L2 weight decay folded into the gradient",
         [](RunConfig& c, const std::string& v) {
             c.train.weight_decay = static_cast<float>(parse_float("weight_decay", v));
         }},
        {"labeled_per_batch", "2", "labeled patches per step",
         [](RunConfig& c, const std::string& v) {
             c.train.labeled_per_batch = static_cast<int>(parse_int("labeled_per_batch", v));
         }},
        {"unlabeled_per_batch", "2", "unlabeled patches per step",
         [](RunConfig& c, const std::string& v) {
             c.train.unlabeled_per_batch = static_cast<int>(parse_int("unlabeled_per_batch", v));
         }},
        {"t_max", "2000", "total optimization steps and schedule horizon",
         [](RunConfig& c, const std::string& v) {
             c.train.t_max = static_cast<int>(parse_int("t_max", v));
         }},
        {"w_max", "0.1", "consistency ramp-up ceiling",
         [](RunConfig& c, const std::string& v) {
             c.train.w_max = static_cast<float>(parse_float("w_max", v));
         }},
        {"ema_decay", "0.99", "teacher EMA decay",
         [](RunConfig& c, const std::string& v) {
             c.train.ema_decay = static_cast<float>(parse_float("ema_decay", v));
         }},
        {"alpha_scale", "20", "cosine distance softmax sharpness",
         [](RunConfig& c, const std::string& v) {
             c.train.alpha_scale = static_cast<float>(parse_float("alpha_scale", v));
         }},
        {"beta", "10", "backward consistency weight",
         [](RunConfig& c, const std::string& v) {
             c.train.beta = static_cast<float>(parse_float("beta", v));
         }},
        {"patch", "24", "training crop size (cubic)",
         [](RunConfig& c, const std::string& v) {
             c.train.patch = static_cast<int>(parse_int("patch", v));
         }},
        {"noise_sigma", "0.1", "mean-teacher input noise sigma",
         [](RunConfig& c, const std::string& v) {
             c.train.noise_sigma = static_cast<float>(parse_float("noise_sigma", v));
         }},
        {"data_dir", "data", "dataset directory (synth writes, train/eval read)",
         [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
        {"out_dir", "runs/default", "run output directory",
         [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
        {"dims", "48,48,48", "synthetic volume extents, one int or D,H,W",
         [](RunConfig& c, const std::string& v) { c.dims = parse_dims("dims", v); }},
        {"labeled_fraction", "0.1", "fraction of training volumes with labels",
         [](RunConfig& c, const std::string& v) {
             c.labeled_fraction = static_cast<float>(parse_float("labeled_fraction", v));
         }},
        {"n_train", "40", "training volumes to synthesize",
         [](RunConfig& c, const std::string& v) {
             c.n_train = static_cast<int>(parse_int("n_train", v));
         }},
        {"n_val", "4", "validation volumes to synthesize",
         [](RunConfig& c, const std::string& v) {
             c.n_val = static_cast<int>(parse_int("n_val", v));
         }},
        {"n_test", "10", "test volumes to synthesize",
         [](RunConfig& c, const std::string& v) {
             c.n_test = static_cast<int>(parse_int("n_test", v));
         }},
        {"val_every", "100", "steps between validation Dice probes",
         [](RunConfig& c, const std::string& v) {
             c.val_every = static_cast<int>(parse_int("val_every", v));
         }},
        {"checkpoint_every", "100", "steps between checkpoint writes",
         [](RunConfig& c, const std::string& v) {
             c.checkpoint_every = static_cast<int>(parse_int("checkpoint_every", v));
         }},
        {"eval_patch", "24", "sliding-window patch for evaluation",
         [](RunConfig& c, const std::string& v) {
             c.eval_patch = static_cast<int>(parse_int("eval_patch", v));
         }},
        {"eval_stride", "12", "sliding-window stride for evaluation",
         [](RunConfig& c, const std::string& v) {
             c.eval_stride = static_cast<int>(parse_int("eval_stride", v));
         }},
    };
    return specs;
}

}  // namespace

void RunConfig::validate() const {
    train.validate();
    if (data_dir.empty()) throw ConfigError("data_dir must be nonempty");
    if (out_dir.empty()) throw ConfigError("out_dir must be nonempty");
    for (int d : dims) {
        if (d < 16) throw ConfigError("dims must be >= 16 per axis");
    }
    if (labeled_fraction <= 0.0f || labeled_fraction > 1.0f) {
        throw ConfigError("labeled_fraction must be in (0, 1]");
    }
    if (n_train < 1 || n_val < 0 || n_test < 0) {
        throw ConfigError("n_train must be >= 1 and split counts nonnegative");
    }
    if (val_every < 1 || checkpoint_every < 1) {
        throw ConfigError("val_every and checkpoint_every must be >= 1");
    }
    if (eval_patch < 1 || eval_stride < 1) {
        throw ConfigError("eval_patch and eval_stride must be >= 1");
    }
    for (int d : dims) {
        if (eval_patch > d) throw ConfigError("eval_patch exceeds the volume extents");
    }
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Kind::open_failed, path + ": cannot open");
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        }
        if (!kv.emplace(key, value).second) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate key " + key);
        }
    }
    return kv;
}

RunConfig run_config_from(const std::map<std::string, std::string>& kv) {
    RunConfig cfg;
    for (const auto& [key, value] : kv) {
        const auto& specs = key_specs();
        bool matched = false;
        for (const auto& spec : specs) {
            if (key == spec.name) {
                spec.apply(cfg, value);
                matched = true;
                break;
            }
        }
        if (!matched) throw ConfigError("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from(parse_config_file(path));
}

std::string config_reference() {
    std::ostringstream out;
    for (const auto& spec : key_specs()) {
        out << "  " << spec.name;
        for (std::size_t i = std::string(spec.name).size(); i < 20; ++i) out << ' ';
        out << "= " << spec.fallback;
        for (std::size_t i = std::string(spec.fallback).size(); i < 12; ++i) out << ' ';
        out << spec.help << "\n";
    }
    return out.str();
}

}  // namespace cpcl
