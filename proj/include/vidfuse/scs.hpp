#ifndef VIDFUSE_SCS_HPP
#define VIDFUSE_SCS_HPP

#include "vidfuse/denoiser.hpp"
#include "vidfuse/scheduler.hpp"

namespace vidfuse {

struct SCSConfig {
    int64_t tau = 15;                    // guided-step budget (first tau denoising steps)
    double alpha0 = 1e4;                 // initial refinement step size
    std::string alpha_decay = "linear";  // "linear" | "exponential"; halves by the end
    double beta_s = 0.5;
    double beta_m = 0.5;
    double beta_init = 0.3;              // inverted-noise mixing weight for x_T
    double guidance = 9.0;
    int64_t steps = 50;
    bool clamp_x0 = true;                // clamp predicted x0 during sampling
    double clamp_limit = 2.0;

    void validate() const;
    double alpha_at(int64_t step_index) const;
};

// x_T = sqrt(beta) eps_m + sqrt(1-beta) eps with eps drawn fresh from the
// seeded stream. beta == 0 is a pure Gaussian draw, beta == 1 returns eps_m.
VideoTensor init_noise(const VideoTensor& eps_m, double beta_init, uint64_t seed);

// mean squared difference between two aggregated maps (the reduction used by
// both Eq.-style guidance losses); cross-wired: the SCA loss updates the
// motion branch, the TSA loss updates the subject branch
double map_alignment_loss(const Tensor& agg_a, const Tensor& agg_b);
std::pair<double, double> collaborative_losses(const AttentionBundle& bundle_s,
                                               const AttentionBundle& bundle_m,
                                               const std::vector<std::string>& layers);

// x - alpha * grad, with finiteness checks
Tensor guided_update(const Tensor& x, const Tensor& grad, double alpha);

enum class MapKind { SCA, TSA };

// one conditional branch pass: alignment loss of this branch's aggregated
// maps against a detached target, plus its gradient w.r.t. the branch latent
struct AlignmentGrad {
    double loss = 0;
    Tensor grad;  // d loss / d x
};
AlignmentGrad alignment_grad(const Denoiser& model, const Tensor& x,
                             const PromptEmbedding& prompt, int64_t t, const AdapterSet& adapters,
                             MapKind kind, const Tensor& target_agg,
                             const std::vector<std::string>& layers);

struct SampleResult {
    VideoTensor latent;  // x0 in latent space
    VideoTensor pixel;   // decoded
};

// plain DDIM sampling with CFG and a fixed adapter set; the tau = 0 /
// beta_s = 1 reference point for SCS and the "both adapters, single branch"
// baseline
SampleResult naive_sample(const Denoiser& model, const NoiseSchedule& sched,
                          const AdapterSet& adapters, const PromptEmbedding& prompt,
                          const SCSConfig& cfg, uint64_t seed,
                          const VideoTensor* eps_m = nullptr);

// Dual-branch collaborative sampling: subject branch (fused adapter, c_tgt)
// and motion branch (motion adapter, superclass prompt) refine each other's
// latents through attention-map alignment for the first tau steps, then the
// combined noise drives a single shared DDIM trajectory.
SampleResult scs_sample(const Denoiser& model, const NoiseSchedule& sched, const LoraDelta& fused,
                        const LoraDelta& motion, const PromptEmbedding& c_tgt,
                        const PromptEmbedding& c_tgt_super, const SCSConfig& cfg, uint64_t seed,
                        const VideoTensor* eps_m = nullptr);

}  // namespace vidfuse

#endif
