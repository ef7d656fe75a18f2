#include "vidfuse/scheduler.hpp"

#include <cmath>

namespace vidfuse {

NoiseSchedule NoiseSchedule::linear_beta(int64_t T, double beta_start, double beta_end) {
    NoiseSchedule s;
    s.num_steps = T;
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int64_t t = 0; t < T; ++t) {
        double beta = beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                       static_cast<double>(T - 1);
        prod *= 1.0 - beta;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    s.validate();
    return s;
}

double NoiseSchedule::ab(int64_t t) const {
    if (t == -1) return 1.0;
    if (t < 0 || t >= num_steps) throw range_error("schedule: t out of range");
    return alpha_bar[static_cast<size_t>(t)];
}

void NoiseSchedule::validate() const {
    if (num_steps < 2 || static_cast<int64_t>(alpha_bar.size()) != num_steps)
        throw contract_violation("schedule: bad size");
    for (int64_t t = 0; t < num_steps; ++t) {
        double a = alpha_bar[static_cast<size_t>(t)];
        if (!(a > 0.0 && a < 1.0)) throw contract_violation("schedule: alpha_bar outside (0,1)");
        if (t > 0 && !(a < alpha_bar[static_cast<size_t>(t - 1)]))
            throw contract_violation("schedule: alpha_bar must decrease strictly");
    }
    if (alpha_bar.front() < 0.99) throw contract_violation("schedule: alpha_bar[0] < 0.99");
    if (alpha_bar.back() > 0.01) throw contract_violation("schedule: alpha_bar[T-1] > 0.01");
}

std::vector<int64_t> NoiseSchedule::inference_steps(int64_t n) const {
    if (n < 1 || n > num_steps) throw range_error("inference_steps: bad step count");
    // evenly spaced, descending, always including the noisiest step
    std::vector<int64_t> ts(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        ts[static_cast<size_t>(i)] = (num_steps - 1) - i * num_steps / n;
    return ts;
}

VideoTensor add_noise(const VideoTensor& x, const VideoTensor& eps, int64_t t,
                      const NoiseSchedule& sched) {
    require_same_shape(x.data, eps.data, "add_noise");
    double a = sched.ab(t);
    double sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
    Tensor out(x.data.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = sa * x.data[i] + sb * eps.data[i];
    return {std::move(out), x.space};
}

VideoTensor cfg_combine(const VideoTensor& eps_cond, const VideoTensor& eps_uncond, double scale) {
    require_same_shape(eps_cond.data, eps_uncond.data, "cfg_combine");
    Tensor out(eps_cond.data.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = eps_uncond.data[i] + scale * (eps_cond.data[i] - eps_uncond.data[i]);
    return {std::move(out), eps_cond.space};
}

namespace {
// shared DDIM move between alpha_bar levels (either direction)
Tensor ddim_move(const Tensor& x, const Tensor& eps_hat, double a_from, double a_to) {
    double sa_from = std::sqrt(a_from), sb_from = std::sqrt(1.0 - a_from);
    double sa_to = std::sqrt(a_to), sb_to = std::sqrt(1.0 - a_to);
    Tensor out(x.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x0 = (x[i] - sb_from * eps_hat[i]) / sa_from;
        out[i] = sa_to * x0 + sb_to * eps_hat[i];
    }
    return out;
}
}  // namespace

VideoTensor ddim_step(const VideoTensor& x_t, const VideoTensor& eps_hat, int64_t t,
                      int64_t t_prev, const NoiseSchedule& sched) {
    require_same_shape(x_t.data, eps_hat.data, "ddim_step");
    if (!(t > t_prev)) throw range_error("ddim_step: requires t > t_prev");
    return {ddim_move(x_t.data, eps_hat.data, sched.ab(t), sched.ab(t_prev)), x_t.space};
}

VideoTensor ddim_sample(const VideoTensor& x_T, const DenoiseFn& denoiser,
                        const NoiseSchedule& sched, int64_t steps) {
    std::vector<int64_t> ts = sched.inference_steps(steps);
    Tensor x = x_T.data;
    for (size_t i = 0; i < ts.size(); ++i) {
        int64_t t = ts[i];
        int64_t t_prev = (i + 1 < ts.size()) ? ts[i + 1] : -1;
        Tensor eps = denoiser(x, t);
        x = ddim_move(x, eps, sched.ab(t), sched.ab(t_prev));
        if (!x.all_finite()) throw numerical_failure("ddim_sample: non-finite latent");
    }
    return {std::move(x), x_T.space};
}

VideoTensor ddim_invert(const VideoTensor& x_0, const DenoiseFn& denoiser,
                        const NoiseSchedule& sched, int64_t steps, int fixed_point_iters) {
    std::vector<int64_t> ts = sched.inference_steps(steps);  // descending
    Tensor x = x_0.data;
    // ascend: clean endpoint -> ts.back() -> ... -> ts.front()
    for (size_t i = ts.size(); i-- > 0;) {
        int64_t t_hi = ts[i];
        int64_t t_lo = (i + 1 < ts.size()) ? ts[i + 1] : -1;
        double a_lo = sched.ab(t_lo), a_hi = sched.ab(t_hi);
        // solve x_hi = move(x_lo -> a_hi) with eps evaluated at (x_hi, t_hi),
        // matching what the forward sampling step will later compute
        Tensor eps = denoiser(x, t_hi);
        Tensor x_hi = ddim_move(x, eps, a_lo, a_hi);
        for (int it = 1; it < fixed_point_iters; ++it) {
            eps = denoiser(x_hi, t_hi);
            x_hi = ddim_move(x, eps, a_lo, a_hi);
        }
        x = std::move(x_hi);
        if (!x.all_finite()) throw numerical_failure("ddim_invert: non-finite latent");
    }
    return {std::move(x), x_0.space};
}

}  // namespace vidfuse
