#include "vidfuse/scs.hpp"

#include <cmath>

#include "vidfuse/synthworld.hpp"

namespace vidfuse {

void SCSConfig::validate() const {
    if (std::fabs(beta_s + beta_m - 1.0) > 1e-12)
        throw contract_violation("scs: beta_s + beta_m must equal 1");
    if (beta_init < 0.0 || beta_init > 1.0)
        throw contract_violation("scs: beta_init must lie in [0,1]");
    if (tau < 0 || tau > steps) throw contract_violation("scs: tau must lie in [0, steps]");
    if (alpha_decay != "linear" && alpha_decay != "exponential")
        throw config_error("scs: unknown alpha decay law " + alpha_decay);
}

double SCSConfig::alpha_at(int64_t i) const {
    if (steps <= 1) return alpha0;
    double frac = static_cast<double>(i) / static_cast<double>(steps - 1);
    if (alpha_decay == "exponential") return alpha0 * std::pow(0.5, frac);
    return alpha0 * (1.0 - 0.5 * frac);
}

VideoTensor init_noise(const VideoTensor& eps_m, double beta_init, uint64_t seed) {
    if (beta_init < 0.0 || beta_init > 1.0)
        throw contract_violation("init_noise: beta_init in [0,1]");
    RandomStream rs(derive_seed(seed, "init-noise"));
    Tensor fresh = rs.normal_tensor(eps_m.data.shape);
    double sm = std::sqrt(beta_init), se = std::sqrt(1.0 - beta_init);
    Tensor out(eps_m.data.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = sm * eps_m.data[i] + se * fresh[i];
    return {std::move(out), eps_m.space};
}

double map_alignment_loss(const Tensor& agg_a, const Tensor& agg_b) {
    require_same_shape(agg_a, agg_b, "map_alignment_loss");
    double s = 0;
    for (int64_t i = 0; i < agg_a.numel(); ++i) {
        double d = agg_a[i] - agg_b[i];
        s += d * d;
    }
    return s / static_cast<double>(agg_a.numel());
}

std::pair<double, double> collaborative_losses(const AttentionBundle& bundle_s,
                                               const AttentionBundle& bundle_m,
                                               const std::vector<std::string>& layers) {
    Tensor sca_s = aggregate_maps_value(bundle_s.sca, layers);
    Tensor sca_m = aggregate_maps_value(bundle_m.sca, layers);
    Tensor tsa_s = aggregate_maps_value(bundle_s.tsa, layers);
    Tensor tsa_m = aggregate_maps_value(bundle_m.tsa, layers);
    return {map_alignment_loss(sca_s, sca_m), map_alignment_loss(tsa_s, tsa_m)};
}

Tensor guided_update(const Tensor& x, const Tensor& grad, double alpha) {
    require_same_shape(x, grad, "guided_update");
    if (!grad.all_finite()) throw numerical_failure("guided_update: non-finite gradient");
    Tensor out(x.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] - alpha * grad[i];
    return out;
}

AlignmentGrad alignment_grad(const Denoiser& model, const Tensor& x,
                             const PromptEmbedding& prompt, int64_t t, const AdapterSet& adapters,
                             MapKind kind, const Tensor& target_agg,
                             const std::vector<std::string>& layers) {
    Tape tape;
    int xid = tape.leaf(x, true);
    ForwardOpts opts;
    DenoiseResult r = model.forward(tape, xid, prompt, t, adapters, opts);
    int agg = aggregate_maps(tape, kind == MapKind::SCA ? r.map_ids.sca : r.map_ids.tsa, layers);
    int loss = tape.mse(agg, tape.constant(target_agg));
    tape.backward(loss);
    AlignmentGrad out;
    out.loss = tape.val(loss)[0];
    out.grad = tape.grad(xid);
    return out;
}

namespace {

// DDIM move with optional x0 clamping (keeps strong CFG from running away)
Tensor move_clamped(const Tensor& x, const Tensor& eps, double a_from, double a_to,
                    const SCSConfig& cfg) {
    double sa = std::sqrt(a_from), sb = std::sqrt(1.0 - a_from);
    double sa2 = std::sqrt(a_to), sb2 = std::sqrt(1.0 - a_to);
    Tensor out(x.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double x0 = (x[i] - sb * eps[i]) / sa;
        if (cfg.clamp_x0) x0 = std::clamp(x0, -cfg.clamp_limit, cfg.clamp_limit);
        out[i] = sa2 * x0 + sb2 * eps[i];
    }
    return out;
}

Tensor branch_eps(const Denoiser& model, const Tensor& x, const PromptEmbedding& cond,
                  const PromptEmbedding& uncond, int64_t t, const AdapterSet& adapters,
                  double guidance, AttentionBundle* bundle) {
    Tape tape;
    int xid = tape.leaf(x, false);
    ForwardOpts opts;
    opts.capture_maps = bundle != nullptr;
    DenoiseResult rc = model.forward(tape, xid, cond, t, adapters, opts);
    if (bundle) {
        for (auto& [name, id] : rc.map_ids.sca) bundle->sca.emplace_back(name, tape.val(id));
        for (auto& [name, id] : rc.map_ids.tsa) bundle->tsa.emplace_back(name, tape.val(id));
    }
    Tensor eps_c = tape.val(rc.eps);
    if (guidance == 1.0) return eps_c;
    Tensor eps_u = model.denoise({x, Space::Latent}, uncond, t, adapters).first;
    Tensor out(eps_c.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = eps_u[i] + guidance * (eps_c[i] - eps_u[i]);
    return out;
}

void check_latent_norm(const Tensor& x) {
    if (!x.all_finite() || x.norm() > 1e3)
        throw sampling_failure("sampler: latent diverged");
}

}  // namespace

SampleResult naive_sample(const Denoiser& model, const NoiseSchedule& sched,
                          const AdapterSet& adapters, const PromptEmbedding& prompt,
                          const SCSConfig& cfg, uint64_t seed, const VideoTensor* eps_m) {
    cfg.validate();
    adapters.validate(model.config());
    Vocabulary vocab = Vocabulary::standard(model.config().text_dim);
    PromptEmbedding uncond = null_prompt(vocab);

    const DenoiserConfig& mc = model.config();
    Tensor zero_shape({mc.frames, mc.channels, mc.height, mc.width});
    VideoTensor base_eps = eps_m ? *eps_m : VideoTensor{zero_shape, Space::Latent};
    double beta = eps_m ? cfg.beta_init : 0.0;
    VideoTensor x = init_noise(base_eps, beta, seed);

    std::vector<int64_t> ts = sched.inference_steps(cfg.steps);
    for (size_t i = 0; i < ts.size(); ++i) {
        int64_t t = ts[i];
        int64_t t_prev = (i + 1 < ts.size()) ? ts[i + 1] : -1;
        Tensor eps = branch_eps(model, x.data, prompt, uncond, t, adapters, cfg.guidance, nullptr);
        x.data = move_clamped(x.data, eps, sched.ab(t), sched.ab(t_prev), cfg);
        check_latent_norm(x.data);
    }
    SampleResult out;
    out.latent = x;
    out.pixel = synthworld::from_latent(x);
    return out;
}

SampleResult scs_sample(const Denoiser& model, const NoiseSchedule& sched, const LoraDelta& fused,
                        const LoraDelta& motion, const PromptEmbedding& c_tgt,
                        const PromptEmbedding& c_tgt_super, const SCSConfig& cfg, uint64_t seed,
                        const VideoTensor* eps_m) {
    cfg.validate();
    if (fused.target_set != TargetSet::Spatial || motion.target_set != TargetSet::Temporal)
        throw composition_error("scs: fused adapter must be spatial and motion adapter temporal");
    AdapterSet sub_set{&fused};
    AdapterSet mot_set{&motion};
    sub_set.validate(model.config());
    mot_set.validate(model.config());

    Vocabulary vocab = Vocabulary::standard(model.config().text_dim);
    PromptEmbedding uncond = null_prompt(vocab);
    const std::vector<std::string>& layers = model.config().map_layers;

    const DenoiserConfig& mc = model.config();
    Tensor zero_shape({mc.frames, mc.channels, mc.height, mc.width});
    VideoTensor base_eps = eps_m ? *eps_m : VideoTensor{zero_shape, Space::Latent};
    double beta = eps_m ? cfg.beta_init : 0.0;
    VideoTensor x = init_noise(base_eps, beta, seed);

    std::vector<int64_t> ts = sched.inference_steps(cfg.steps);
    for (size_t i = 0; i < ts.size(); ++i) {
        int64_t t = ts[i];
        int64_t t_prev = (i + 1 < ts.size()) ? ts[i + 1] : -1;
        bool guided = static_cast<int64_t>(i) < cfg.tau;

        Tensor eps_sub, eps_mot;
        if (guided) {
            // duplicate the shared latent into the two branch latents
            Tensor x_sub = x.data;
            Tensor x_mot = x.data;

            // conditional passes capture the maps used for mutual alignment
            AttentionBundle bs, bm;
            Tape ts_sub, ts_mot;
            int xs = ts_sub.leaf(x_sub, true);
            int xm = ts_mot.leaf(x_mot, true);
            DenoiseResult rs = model.forward(ts_sub, xs, c_tgt, t, sub_set, {});
            DenoiseResult rm = model.forward(ts_mot, xm, c_tgt_super, t, mot_set, {});
            Tensor sca_s = ts_sub.val(aggregate_maps(ts_sub, rs.map_ids.sca, layers));
            Tensor tsa_m = ts_mot.val(aggregate_maps(ts_mot, rm.map_ids.tsa, layers));

            // L_{m->s}: align the subject branch's temporal maps to the motion
            // branch's; updates the subject latent
            {
                int agg = aggregate_maps(ts_sub, rs.map_ids.tsa, layers);
                int loss = ts_sub.mse(agg, ts_sub.constant(tsa_m));
                ts_sub.backward(loss);
                x_sub = guided_update(x_sub, ts_sub.grad(xs), cfg.alpha_at(static_cast<int64_t>(i)));
            }
            // L_{s->m}: align the motion branch's spatial cross-attention maps
            // to the subject branch's; updates the motion latent
            {
                int agg = aggregate_maps(ts_mot, rm.map_ids.sca, layers);
                int loss = ts_mot.mse(agg, ts_mot.constant(sca_s));
                ts_mot.backward(loss);
                x_mot = guided_update(x_mot, ts_mot.grad(xm), cfg.alpha_at(static_cast<int64_t>(i)));
            }
            check_latent_norm(x_sub);
            check_latent_norm(x_mot);

            // recompute both branch noises at the refined latents
            eps_sub = branch_eps(model, x_sub, c_tgt, uncond, t, sub_set, cfg.guidance, nullptr);
            eps_mot = branch_eps(model, x_mot, c_tgt_super, uncond, t, mot_set, cfg.guidance,
                                 nullptr);
        } else {
            eps_sub = branch_eps(model, x.data, c_tgt, uncond, t, sub_set, cfg.guidance, nullptr);
            eps_mot = branch_eps(model, x.data, c_tgt_super, uncond, t, mot_set, cfg.guidance,
                                 nullptr);
        }

        // one shared latent leaves the step
        Tensor eps_t(eps_sub.shape);
        for (int64_t k = 0; k < eps_t.numel(); ++k)
            eps_t[k] = cfg.beta_s * eps_sub[k] + cfg.beta_m * eps_mot[k];
        x.data = move_clamped(x.data, eps_t, sched.ab(t), sched.ab(t_prev), cfg);
        check_latent_norm(x.data);
    }

    SampleResult out;
    out.latent = x;
    out.pixel = synthworld::from_latent(x);
    return out;
}

}  // namespace vidfuse
