#ifndef VIDFUSE_SCHEDULER_HPP
#define VIDFUSE_SCHEDULER_HPP

#include <functional>
#include <vector>

#include "vidfuse/video.hpp"

namespace vidfuse {

// Discrete diffusion schedule. t = 0 is the cleanest step, t = T-1 the
// noisiest; alpha_bar decreases strictly in t, starting >= 0.99 and ending
// <= 0.01 so the signal is fully noised by the last step.
struct NoiseSchedule {
    int64_t num_steps = 0;
    std::vector<double> alpha_bar;

    // linear-beta schedule between the two endpoint betas
    static NoiseSchedule linear_beta(int64_t T = 1000, double beta_start = 1e-4,
                                     double beta_end = 2e-2);

    double ab(int64_t t) const;        // alpha_bar[t]; t == -1 means the clean endpoint (1.0)
    void validate() const;

    // descending timesteps for an n-step inference pass over [0, T)
    std::vector<int64_t> inference_steps(int64_t n) const;
};

// x_t = sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps
VideoTensor add_noise(const VideoTensor& x, const VideoTensor& eps, int64_t t,
                      const NoiseSchedule& sched);

// eps_uncond + scale * (eps_cond - eps_uncond)
VideoTensor cfg_combine(const VideoTensor& eps_cond, const VideoTensor& eps_uncond, double scale);

// Deterministic (eta = 0) DDIM update from t down to t_prev; t_prev == -1
// denotes the clean endpoint (alpha_bar = 1).
VideoTensor ddim_step(const VideoTensor& x_t, const VideoTensor& eps_hat, int64_t t,
                      int64_t t_prev, const NoiseSchedule& sched);

// Denoiser as seen by the scheduler: (x, t) -> predicted noise. Conditioning
// and adapter wiring happen in the caller.
using DenoiseFn = std::function<Tensor(const Tensor&, int64_t)>;

// Reversed DDIM trajectory: returns the terminal latent whose forward DDIM
// pass regenerates x_0. Each ascent step solves the implicit DDIM relation by
// fixed-point iteration so that invert-then-sample round-trips tightly.
VideoTensor ddim_invert(const VideoTensor& x_0, const DenoiseFn& denoiser,
                        const NoiseSchedule& sched, int64_t steps, int fixed_point_iters = 5);

// forward DDIM sampler over the same step grid (used by round-trip checks
// and the sampling pipelines)
VideoTensor ddim_sample(const VideoTensor& x_T, const DenoiseFn& denoiser,
                        const NoiseSchedule& sched, int64_t steps);

}  // namespace vidfuse

#endif
