#ifndef VIDFUSE_MOTION_TRAINER_HPP
#define VIDFUSE_MOTION_TRAINER_HPP

#include <vector>

#include "vidfuse/denoiser.hpp"
#include "vidfuse/scheduler.hpp"
#include "vidfuse/subject_trainer.hpp"

namespace vidfuse {

// (1 + omega) * eps - omega * eps_ap, elementwise
Tensor appearance_free_target(const Tensor& eps, const Tensor& eps_ap, double omega);

struct MotionLossResult {
    double loss = 0;
    double eps_ap_norm = 0;  // diagnostic, logged per step
};

// Reconstruction against the negatively-guided appearance-free target.
// eps_ap comes from the BASE model (no adapter) conditioned on c_ap and is
// never differentiated through. The adapter must target temporal layers.
MotionLossResult motion_loss(const Denoiser& model, const NoiseSchedule& sched,
                             const Tensor& motion_latent, const PromptEmbedding& c_m,
                             const PromptEmbedding& c_ap, const LoraDelta& adapter, double omega,
                             const NoiseDraw& draw);

struct MotionTrainConfig {
    double omega = 0.5;
    int64_t steps = 300;
    double lr = 1e-4;
    int64_t rank = 4;
    double lora_scale = 8.0;
    int64_t inversion_steps = 200;
    double lr_token = 1e-3;
    // template for c_ap; <p1>/<p2> bind to the inverted performer tokens
    std::string cap_template = "a static video of <p1> and <p2>";
};

struct MotionTrainResult {
    LoraDelta adapter;
    std::vector<SpecialToken> performer_tokens;
    PromptEmbedding c_ap;
    std::vector<TrainLogRow> log;  // l_sub column holds L_mot; l_reg holds ||eps_ap||
};

// Inputs describe the reference video: its latent, its pixel render with
// ground-truth per-performer masks (middle frame feeds textual inversion),
// the performer class words and the motion verb for c_m.
struct MotionReference {
    Tensor latent;                      // [F, C, H, W]
    VideoTensor pixel;                  // [F, 3, H', W']
    std::vector<Tensor> masks;          // per performer, [F, H', W']
    std::vector<std::string> class_words;
    std::string verb;
};

MotionTrainResult train_motion(Denoiser& model, const NoiseSchedule& sched,
                               const MotionReference& ref, const MotionTrainConfig& cfg,
                               uint64_t seed);

}  // namespace vidfuse

#endif
