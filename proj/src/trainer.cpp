#include "cpcl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cpcl/eval.hpp"
#include "cpcl/losses.hpp"
#include "cpcl/ops.hpp"
#include "cpcl/proto.hpp"

namespace fs = std::filesystem;

namespace cpcl {

namespace {

// Substream tag for step t's batch and noise draws; disjoint from the init
// stream by construction.
constexpr std::uint64_t kStepStreamBase = 0x5354455000000000ull;  // "STEP"

Tensor gaussian_noise_like(const Tensor& x, float sigma, Rng& rng) {
    std::vector<float> v(x.numel());
    for (auto& e : v) e = std::clamp(rng.normal(0.0f, sigma), -0.2f, 0.2f);
    return Tensor::from_data(x.shape(), std::move(v));
}

float checked_item(const Tensor& loss, const char* name, std::uint64_t step) {
    const float v = loss.item();
    if (!std::isfinite(v)) {
        throw NumericalError("train_step: " + std::string(name) + " is non-finite at step " +
                             std::to_string(step));
    }
    return v;
}

void append_json_line(std::ofstream& out, const nlohmann::json& rec, const std::string& path) {
    out << rec.dump() << "\n";
    out.flush();
    if (!out) throw IoError(IoError::Kind::write_failed, path + ": write failed");
}

}  // namespace

TrainMode parse_mode(const std::string& name) {
    if (name == "supervised") return TrainMode::supervised;
    if (name == "mt") return TrainMode::mt;
    if (name == "fpcl") return TrainMode::fpcl;
    if (name == "bpcl") return TrainMode::bpcl;
    if (name == "cpcl") return TrainMode::cpcl;
    if (name == "mt_fpcl") return TrainMode::mt_fpcl;
    if (name == "mt_bpcl") return TrainMode::mt_bpcl;
    if (name == "mt_cpcl") return TrainMode::mt_cpcl;
    throw ConfigError("unknown training mode '" + name + "'");
}

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::supervised: return "supervised";
        case TrainMode::mt: return "mt";
        case TrainMode::fpcl: return "fpcl";
        case TrainMode::bpcl: return "bpcl";
        case TrainMode::cpcl: return "cpcl";
        case TrainMode::mt_fpcl: return "mt_fpcl";
        case TrainMode::mt_bpcl: return "mt_bpcl";
        case TrainMode::mt_cpcl: return "mt_cpcl";
    }
    throw ConfigError("invalid training mode value");
}

bool mode_uses_unlabeled(TrainMode mode) { return mode != TrainMode::supervised; }

bool mode_uses_noise(TrainMode mode) {
    return mode == TrainMode::mt || mode == TrainMode::mt_fpcl || mode == TrainMode::mt_bpcl ||
           mode == TrainMode::mt_cpcl;
}

bool mode_uses_forward(TrainMode mode) {
    return mode == TrainMode::fpcl || mode == TrainMode::cpcl || mode == TrainMode::mt_fpcl ||
           mode == TrainMode::mt_cpcl;
}

bool mode_uses_backward(TrainMode mode) {
    return mode == TrainMode::bpcl || mode == TrainMode::cpcl || mode == TrainMode::mt_bpcl ||
           mode == TrainMode::mt_cpcl;
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0f)) throw ConfigError("lr0 must be positive");
    if (momentum < 0.0f || momentum >= 1.0f) throw ConfigError("momentum must lie in [0, 1)");
    if (weight_decay < 0.0f) throw ConfigError("weight_decay must be non-negative");
    if (labeled_per_batch < 1) throw ConfigError("labeled_per_batch must be >= 1");
    if (unlabeled_per_batch < 1) throw ConfigError("unlabeled_per_batch must be >= 1");
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
    if (w_max < 0.0f) throw ConfigError("w_max must be non-negative");
    if (ema_decay < 0.0f || ema_decay >= 1.0f) throw ConfigError("ema_decay must lie in [0, 1)");
    if (!(alpha_scale > 0.0f)) throw ConfigError("alpha_scale must be positive");
    if (beta < 0.0f) throw ConfigError("beta must be non-negative");
    if (patch < 1) throw ConfigError("patch must be >= 1");
    if (mode_uses_noise(mode) && !(noise_sigma > 0.0f)) {
        throw ConfigError("noise_sigma must be positive in mean-teacher modes");
    }
}

float rampup_weight(std::uint64_t t, int t_max, float w_max) {
    if (t_max < 1) throw ConfigError("rampup_weight: t_max must be >= 1");
    if (t >= static_cast<std::uint64_t>(t_max)) return w_max;
    const float r = 1.0f - static_cast<float>(t) / static_cast<float>(t_max);
    return w_max * std::exp(-5.0f * r * r);
}

float poly_lr(std::uint64_t t, int t_max, float lr0) {
    if (t_max < 1) throw ConfigError("poly_lr: t_max must be >= 1");
    if (t >= static_cast<std::uint64_t>(t_max)) return 0.0f;
    const float r = 1.0f - static_cast<float>(t) / static_cast<float>(t_max);
    return lr0 * std::pow(r, 0.9f);
}

void sgd_update(ParamMap& params, ParamMap& momentum, float lr, float momentum_coef,
                float weight_decay) {
    for (auto& [name, theta] : params) {
        auto mit = momentum.find(name);
        if (mit == momentum.end() || mit->second.shape() != theta.shape()) {
            throw ValueError("sgd_update: momentum buffer missing or misshaped for " + name);
        }
        auto tv = theta.data_mut();
        auto vv = mit->second.data_mut();
        if (theta.has_grad()) {
            auto gv = theta.grad();
            for (std::size_t i = 0; i < tv.size(); ++i) {
                const float g = gv[i] + weight_decay * tv[i];
                vv[i] = momentum_coef * vv[i] + g;
                tv[i] -= lr * vv[i];
            }
        } else {
            for (std::size_t i = 0; i < tv.size(); ++i) {
                const float g = weight_decay * tv[i];
                vv[i] = momentum_coef * vv[i] + g;
                tv[i] -= lr * vv[i];
            }
        }
    }
}

void ema_update(ParamMap& teacher, const ParamMap& student, float decay) {
    if (teacher.size() != student.size()) throw ValueError("ema_update: parameter set mismatch");
    for (auto& [name, tt] : teacher) {
        auto sit = student.find(name);
        if (sit == student.end() || sit->second.shape() != tt.shape()) {
            throw ValueError("ema_update: parameter set mismatch at " + name);
        }
        auto tv = tt.data_mut();
        auto sv = sit->second.data();
        for (std::size_t i = 0; i < tv.size(); ++i) {
            tv[i] = decay * tv[i] + (1.0f - decay) * sv[i];
        }
    }
}

StepReport train_step(const UNet& net, ModelState& state, const PatchBatch& labeled,
                      const PatchBatch& unlabeled, const TrainConfig& cfg, Rng& rng) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    const std::uint64_t t = state.step;

    StepReport rep;
    rep.step = t;
    rep.lr = poly_lr(t, cfg.t_max, cfg.lr0);
    rep.lambda = rampup_weight(t, cfg.t_max, cfg.w_max);

    if (!labeled.images.defined() || !labeled.labels.defined()) {
        throw ValueError("train_step: labeled batch must carry images and labels");
    }
    if (labeled.images.dim(0) != cfg.labeled_per_batch) {
        throw ValueError("train_step: labeled batch size mismatch");
    }

    UNetOutput out_l = net.forward(state.student, labeled.images);
    Tensor l_sup = supervised_loss(out_l.probs, labeled.labels);
    rep.l_sup = checked_item(l_sup, "l_sup", t);

    Tensor l_total = l_sup;
    const bool consistency = mode_uses_unlabeled(cfg.mode) && rep.lambda > 0.0f;
    if (consistency) {
        if (!unlabeled.images.defined() || unlabeled.images.dim(0) != cfg.unlabeled_per_batch) {
            throw ValueError("train_step: unlabeled batch size mismatch");
        }
        const std::array<int, 3> patch_dims = {unlabeled.images.dim(2), unlabeled.images.dim(3),
                                               unlabeled.images.dim(4)};

        // Mean-teacher modes perturb the input; the teacher sees its own
        // noise draw. Prototype-only modes feed the clean volume.
        Tensor teacher_in = unlabeled.images;
        Tensor student_in;
        if (mode_uses_noise(cfg.mode)) {
            student_in = add(unlabeled.images,
                             gaussian_noise_like(unlabeled.images, cfg.noise_sigma, rng));
            teacher_in = add(unlabeled.images,
                             gaussian_noise_like(unlabeled.images, cfg.noise_sigma, rng));
        }
        UNetOutput out_u = net.forward(state.teacher, teacher_in);

        Tensor l_c;
        if (mode_uses_noise(cfg.mode)) {
            UNetOutput out_s = net.forward(state.student, student_in);
            Tensor l_mt = mse_loss(out_s.probs, out_u.probs);
            rep.l_mt = checked_item(l_mt, "l_mt", t);
            l_c = l_mt;
        }
        if (mode_uses_forward(cfg.mode)) {
            PrototypeSet labeled_protos = masked_average_pool(out_l.features, labeled.labels);
            Tensor l2u = proto_predict(out_u.features, labeled_protos, cfg.alpha_scale,
                                       patch_dims);
            Tensor l_fpc = forward_consistency_loss(l2u, out_u.probs);
            rep.l_fpc = checked_item(l_fpc, "l_fpc", t);
            l_c = l_c.defined() ? add(l_c, l_fpc) : l_fpc;
        }
        if (mode_uses_backward(cfg.mode)) {
            Tensor pseudo = hard_mask(out_u.probs);
            PrototypeSet unlabeled_protos = masked_average_pool(out_u.features, pseudo);
            const std::array<int, 3> label_dims = {labeled.labels.dim(1), labeled.labels.dim(2),
                                                   labeled.labels.dim(3)};
            Tensor u2l = proto_predict(out_l.features, unlabeled_protos, cfg.alpha_scale,
                                       label_dims);
            Tensor l_bpc = backward_consistency_loss(labeled.labels, u2l);
            rep.l_bpc = checked_item(l_bpc, "l_bpc", t);
            Tensor weighted = scale(l_bpc, cfg.beta);
            l_c = l_c.defined() ? add(l_c, weighted) : weighted;
        }
        l_total = add(l_sup, scale(l_c, rep.lambda));
    }
    rep.l_total = checked_item(l_total, "l_total", t);

    l_total.backward();
    sgd_update(state.student, state.momentum, rep.lr, cfg.momentum, cfg.weight_decay);
    for (auto& [name, theta] : state.student) theta.zero_grad();
    ema_update(state.teacher, state.student, cfg.ema_decay);
    state.step = t + 1;

    rep.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return rep;
}

void run_training(const UNet& net, const TrainConfig& cfg, const Dataset& data,
                  const std::string& out_dir, int val_every, int checkpoint_every,
                  int stop_after) {
    cfg.validate();
    if (val_every < 1 || checkpoint_every < 1) {
        throw ConfigError("val_every and checkpoint_every must be >= 1");
    }
    if (data.split.train_labeled.empty()) {
        throw ConfigError("training needs at least one labeled volume");
    }
    if (mode_uses_unlabeled(cfg.mode) && data.split.train_unlabeled.empty()) {
        throw ConfigError("mode " + to_string(cfg.mode) + " needs unlabeled training volumes");
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError(IoError::Kind::open_failed, out_dir + ": cannot create output dir");

    const auto labeled_pool = data.pool(data.split.train_labeled);
    const auto unlabeled_pool =
        mode_uses_unlabeled(cfg.mode) ? data.pool(data.split.train_unlabeled)
                                      : std::vector<const VolumeSample*>{};
    const auto val_pool = data.pool(data.split.val);

    const std::string last_path = (fs::path(out_dir) / "last.ckpt").string();
    ModelState state =
        fs::exists(last_path) ? load_checkpoint(last_path) : init_model(net, cfg.seed);

    const std::uint64_t goal = static_cast<std::uint64_t>(
        stop_after >= 0 ? std::min(stop_after, cfg.t_max) : cfg.t_max);

    const std::string steps_path = (fs::path(out_dir) / "steps.jsonl").string();
    const std::string val_path = (fs::path(out_dir) / "val.jsonl").string();
    std::ofstream steps_log(steps_path, std::ios::app);
    std::ofstream val_log(val_path, std::ios::app);
    if (!steps_log || !val_log) {
        throw IoError(IoError::Kind::open_failed, out_dir + ": cannot open training logs");
    }

    while (state.step < goal) {
        const std::uint64_t t = state.step;
        Rng step_rng(Rng::mix(state.rng_state, kStepStreamBase + t));
        PatchBatch labeled = sample_patches(labeled_pool, cfg.labeled_per_batch, cfg.patch,
                                            step_rng);
        PatchBatch unlabeled;
        if (mode_uses_unlabeled(cfg.mode)) {
            unlabeled = sample_patches(unlabeled_pool, cfg.unlabeled_per_batch, cfg.patch,
                                       step_rng);
        }
        StepReport rep = train_step(net, state, labeled, unlabeled, cfg, step_rng);
        append_json_line(steps_log,
                         nlohmann::json{{"step", rep.step},
                                        {"lr", rep.lr},
                                        {"lambda", rep.lambda},
                                        {"l_sup", rep.l_sup},
                                        {"l_fpc", rep.l_fpc},
                                        {"l_bpc", rep.l_bpc},
                                        {"l_mt", rep.l_mt},
                                        {"l_total", rep.l_total},
                                        {"wall_ms", rep.wall_ms}},
                         steps_path);

        if (state.step % static_cast<std::uint64_t>(val_every) == 0 && !val_pool.empty()) {
            const double dice = mean_dice(net, state.student, val_pool, cfg.patch,
                                          std::max(1, cfg.patch / 2));
            append_json_line(val_log, nlohmann::json{{"step", state.step}, {"dice", dice}},
                             val_path);
        }
        if (state.step % static_cast<std::uint64_t>(checkpoint_every) == 0) {
            save_checkpoint(state, last_path);
        }
    }
    save_checkpoint(state, last_path);
    if (goal == static_cast<std::uint64_t>(cfg.t_max)) {
        save_checkpoint(state, (fs::path(out_dir) / "final.ckpt").string());
    }
}

}  // namespace cpcl
