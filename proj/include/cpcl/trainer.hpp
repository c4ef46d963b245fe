#pragma once

#include <cstdint>
#include <string>

#include "cpcl/checkpoint.hpp"
#include "cpcl/data.hpp"
#include "cpcl/rng.hpp"
#include "cpcl/unet.hpp"

namespace cpcl {

// Ablation axes: the two prototype consistency directions, plain mean
// teacher, and their combinations.
enum class TrainMode {
    supervised,
    mt,
    fpcl,
    bpcl,
    cpcl,
    mt_fpcl,
    mt_bpcl,
    mt_cpcl,
};

TrainMode parse_mode(const std::string& name);
std::string to_string(TrainMode mode);

bool mode_uses_unlabeled(TrainMode mode);
bool mode_uses_noise(TrainMode mode);     // mean-teacher perturbation branch
bool mode_uses_forward(TrainMode mode);   // prototype L2U term
bool mode_uses_backward(TrainMode mode);  // prototype U2L term

struct TrainConfig {
    float lr0 = 0.01f;
    float momentum = 0.9f;
    float weight_decay = 1e-4f;
    int labeled_per_batch = 2;
    int unlabeled_per_batch = 2;
    int t_max = 2000;
    float w_max = 0.1f;
    float ema_decay = 0.99f;
    float alpha_scale = 20.0f;
    float beta = 10.0f;
    int patch = 24;
    TrainMode mode = TrainMode::cpcl;
    float noise_sigma = 0.1f;
    std::uint64_t seed = 1;

    void validate() const;
};

struct StepReport {
    std::uint64_t step = 0;  // t before the update, the value the schedules saw
    float lr = 0.0f;
    float lambda = 0.0f;
    float l_sup = 0.0f;
    float l_fpc = 0.0f;
    float l_bpc = 0.0f;
    float l_mt = 0.0f;
    float l_total = 0.0f;
    double wall_ms = 0.0;
};

// w_max * exp(-5 (1 - t/t_max)^2), clamped to w_max past t_max.
float rampup_weight(std::uint64_t t, int t_max, float w_max);

// lr0 * (1 - t/t_max)^0.9; zero at and past t_max.
float poly_lr(std::uint64_t t, int t_max, float lr0);

// g = grad + wd * theta; v = m * v + g; theta -= lr * v. Parameters without
// an accumulated gradient this step are treated as grad = 0.
void sgd_update(ParamMap& params, ParamMap& momentum, float lr, float momentum_coef,
                float weight_decay);

// theta_teacher = decay * theta_teacher + (1 - decay) * theta_student.
void ema_update(ParamMap& teacher, const ParamMap& student, float decay);

// One optimization step on pre-drawn batches. The rng feeds the mean-teacher
// noise draws only; prototype modes never touch it. The unlabeled batch may
// be empty in supervised mode.
StepReport train_step(const UNet& net, ModelState& state, const PatchBatch& labeled,
                      const PatchBatch& unlabeled, const TrainConfig& cfg, Rng& rng);

// Full training loop: per-step batches are drawn from substreams of the
// checkpointed seed, so a resumed run replays the exact batch sequence.
// Writes steps.jsonl (one StepReport per line), val.jsonl (mean validation
// Dice every val_every steps), last.ckpt checkpoints, and final.ckpt. If
// out_dir/last.ckpt exists the run resumes from it. stop_after pauses the
// run at that step without touching the schedule horizon t_max.
void run_training(const UNet& net, const TrainConfig& cfg, const Dataset& data,
                  const std::string& out_dir, int val_every = 100, int checkpoint_every = 100,
                  int stop_after = -1);

}  // namespace cpcl
