#ifndef VIDFUSE_SUBJECT_TRAINER_HPP
#define VIDFUSE_SUBJECT_TRAINER_HPP

#include <vector>

#include "vidfuse/denoiser.hpp"
#include "vidfuse/scheduler.hpp"

namespace vidfuse {

// A caption-video pair from the auxiliary pool, pre-encoded to latent space.
struct AuxItem {
    Tensor latent;  // [F, C, H, W]
    PromptEmbedding prompt;
};

struct NoiseDraw {
    int64_t t = 0;
    Tensor eps;
};

struct SubjectTrainConfig {
    double lambda1 = 0.25;
    int64_t steps = 300;
    double lr_lora = 1e-4;
    double lr_token = 1e-3;
    int64_t rank = 4;
    double lora_scale = 8.0;
    std::string token_name = "<sub>";
    std::string init_token = "circle";  // superclass word; token starts from its embedding
};

struct TrainLogRow {
    int64_t step = 0;
    double l_sub = 0, l_reg = 0, total = 0;
};

struct SubjectTrainResult {
    LoraDelta adapter;
    SpecialToken token;
    std::vector<TrainLogRow> log;
};

// Eq.-style reconstruction loss on a noised subject image under "a <token>",
// with the spatial adapter applied. Temporal-targeted adapters are rejected.
double subject_loss(const Denoiser& model, const NoiseSchedule& sched, const Tensor& image_latent,
                    const SpecialToken& token, const LoraDelta& adapter, const NoiseDraw& draw);

// Same reconstruction loss on an auxiliary caption-video pair; keeps the
// pre-trained motion prior alive during image-only fine-tuning.
double regularization_loss(const Denoiser& model, const NoiseSchedule& sched, const AuxItem& aux,
                           const LoraDelta& adapter, const NoiseDraw& draw);

// Per step: one subject image plus one aux clip; total = L_sub + lambda1 * L_reg.
// Only the adapter factors and the token embedding move.
SubjectTrainResult train_subject(Denoiser& model, const NoiseSchedule& sched,
                                 const std::vector<Tensor>& subject_latents,
                                 const std::vector<AuxItem>& aux_pool,
                                 const SubjectTrainConfig& cfg, uint64_t seed);

std::string format_train_log(const std::vector<TrainLogRow>& log);

}  // namespace vidfuse

#endif
