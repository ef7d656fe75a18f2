#ifndef VIDFUSE_FUSION_HPP
#define VIDFUSE_FUSION_HPP

#include <vector>

#include "vidfuse/denoiser.hpp"
#include "vidfuse/scheduler.hpp"
#include "vidfuse/scs.hpp"
#include "vidfuse/subject_trainer.hpp"

namespace vidfuse {

struct CutMixResult {
    VideoTensor composite;       // pixel space
    std::vector<Tensor> masks;   // per subject, occlusion-resolved, disjoint
};

// Paste two segmented subjects onto a clean background video. Subject b is
// drawn over subject a; emitted masks reflect the occlusion. The default
// placement sampler rejects offsets whose mask overlap exceeds 30% of the
// smaller subject's area in any frame.
CutMixResult build_cutmix(const VideoTensor& video_a, const Tensor& masks_a,
                          const VideoTensor& video_b, const Tensor& masks_b,
                          const VideoTensor& background, RandomStream& placement);

// one distillation sample: a video generated by subject n's adapter
struct DistillItem {
    size_t subject = 0;
    Tensor latent;  // [F, C, H, W]
    PromptEmbedding prompt;
    NoiseDraw draw;
};

// Eq.-style noise matching between the fused adapter and each subject
// adapter (teachers detached); mean over subjects of per-subject means.
double fusion_loss(const Denoiser& model, const NoiseSchedule& sched, const LoraDelta& fused,
                   const std::vector<const LoraDelta*>& subject_loras,
                   const std::vector<DistillItem>& batch);

// Attention regularization against ground-truth masks: the layer-averaged
// cross-attention map at each subject's special-token index, min-max
// normalized per frame, against the mask downsampled to the attention grid.
// Differentiable w.r.t. the forward pass that produced `map_ids`.
int attention_reg_loss(Tape& tape, const AttnMapIds& map_ids,
                       const std::vector<std::string>& layers,
                       const std::vector<int64_t>& subject_token_indices,
                       const std::vector<Tensor>& gt_masks_attn_res);

// value-level reference evaluator (the pre-build oracle for the above)
double attention_reg_loss_value(const Tensor& agg_sca,
                                const std::vector<int64_t>& subject_token_indices,
                                const std::vector<Tensor>& gt_masks_attn_res);

// average-pool a per-frame pixel mask to the attention grid
Tensor downsample_mask(const Tensor& mask_fhw, int64_t gh, int64_t gw);

struct FusionConfig {
    double lambda2 = 0.6;
    int64_t steps = 350;
    double lr = 1e-4;
    int64_t distill_per_subject = 8;
    int64_t distill_ddim_steps = 20;
    double distill_guidance = 7.0;
    int64_t cutmix_pool = 6;
};

struct FusionInputs {
    std::vector<const LoraDelta*> subject_loras;
    std::vector<SpecialToken> tokens;  // one per subject
    // synthworld renders of each subject (for CutMix), with single-subject masks
    std::vector<VideoTensor> cutmix_videos;  // pixel
    std::vector<Tensor> cutmix_masks;        // [F, H, W]
    VideoTensor background;                  // clean pixel background video
};

struct FusionResult {
    LoraDelta fused;
    std::vector<TrainLogRow> log;  // l_sub column holds L_fusion, l_reg holds L_attn
    std::vector<std::vector<Tensor>> distill_latents;  // per subject (kept for reuse/tests)
};

// Average-init fused adapter refined by alternating distillation and CutMix
// attention steps (Eq.-style total with weight lambda2).
FusionResult fuse(Denoiser& model, const NoiseSchedule& sched, const FusionInputs& in,
                  const FusionConfig& cfg, uint64_t seed);

}  // namespace vidfuse

#endif
