#include "vidfuse/motion_trainer.hpp"

#include "vidfuse/adam.hpp"

namespace vidfuse {

Tensor appearance_free_target(const Tensor& eps, const Tensor& eps_ap, double omega) {
    require_same_shape(eps, eps_ap, "appearance_free_target");
    if (omega < 0) throw contract_violation("appearance_free_target: omega >= 0");
    Tensor out(eps.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = (1.0 + omega) * eps[i] - omega * eps_ap[i];
    return out;
}

namespace {

void require_temporal(const LoraDelta& adapter) {
    if (adapter.target_set != TargetSet::Temporal)
        throw contract_violation("motion adapter must target temporal layers only");
}

void require_learned_appearance(const PromptEmbedding& c_ap) {
    for (size_t i = 0; i < c_ap.tokens.size(); ++i)
        if (c_ap.is_learnable(i) && c_ap.special_vecs[i].numel() == 0)
            throw config_error("c_ap has an unlearned placeholder token: " + c_ap.tokens[i]);
}

}  // namespace

MotionLossResult motion_loss(const Denoiser& model, const NoiseSchedule& sched,
                             const Tensor& motion_latent, const PromptEmbedding& c_m,
                             const PromptEmbedding& c_ap, const LoraDelta& adapter, double omega,
                             const NoiseDraw& draw) {
    require_temporal(adapter);
    require_learned_appearance(c_ap);
    VideoTensor x_t = add_noise({motion_latent, Space::Latent}, {draw.eps, Space::Latent}, draw.t,
                                sched);
    // base model, no adapter, no gradient
    Tensor eps_ap = model.denoise(x_t, c_ap, draw.t, {}).first;
    Tensor target = appearance_free_target(draw.eps, eps_ap, omega);
    Tensor pred = model.denoise(x_t, c_m, draw.t, {&adapter}).first;
    Tensor diff = axpy(pred, -1.0, target);
    MotionLossResult r;
    r.loss = diff.sq_norm() / static_cast<double>(diff.numel());
    r.eps_ap_norm = eps_ap.norm();
    return r;
}

MotionTrainResult train_motion(Denoiser& model, const NoiseSchedule& sched,
                               const MotionReference& ref, const MotionTrainConfig& cfg,
                               uint64_t seed) {
    if (ref.class_words.size() != ref.masks.size() || ref.class_words.empty())
        throw contract_violation("train_motion: class word per mask required");

    MotionTrainResult res;
    res.adapter = new_lora(model.config(), TargetSet::Temporal, cfg.rank,
                           derive_seed(seed, "motion-lora"), cfg.lora_scale);
    res.adapter.base_fingerprint = model.weights_fingerprint();

    // appearance tokens from the middle frame of the reference video
    int64_t F = ref.pixel.frames();
    int64_t mid = F / 2;
    int64_t H = ref.pixel.height(), W = ref.pixel.width();
    Tensor mid_frame({1, 3, H, W});
    for (int64_t i = 0; i < mid_frame.numel(); ++i)
        mid_frame[i] = ref.pixel.data[mid * 3 * H * W + i];
    for (size_t p = 0; p < ref.class_words.size(); ++p) {
        Tensor mask({H, W});
        for (int64_t i = 0; i < H * W; ++i) mask[i] = ref.masks[p][mid * H * W + i];
        InversionResult inv = textual_inversion(
            model, sched, {mid_frame, Space::Pixel}, mask, ref.class_words[p],
            "<p" + std::to_string(p + 1) + ">", cfg.inversion_steps, cfg.lr_token,
            derive_seed(seed, "inversion:" + std::to_string(p)));
        res.performer_tokens.push_back(inv.token);
    }

    Vocabulary vocab = Vocabulary::standard(model.config().text_dim);
    std::map<std::string, Binding> bind;
    for (size_t p = 0; p < res.performer_tokens.size(); ++p)
        bind["<p" + std::to_string(p + 1) + ">"] = Binding(res.performer_tokens[p]);
    std::string cap_template = cfg.cap_template;
    if (res.performer_tokens.size() == 1 && cap_template.find("<p2>") != std::string::npos)
        cap_template = "a static video of <p1>";
    res.c_ap = build_prompt(vocab, cap_template, bind);

    std::string cm_str = "a " + ref.class_words[0];
    if (ref.class_words.size() > 1) cm_str += " " + ref.verb + " a " + ref.class_words[1];
    PromptEmbedding c_m = build_prompt(vocab, cm_str);

    if (cfg.steps == 0) return res;

    RandomStream rs(derive_seed(seed, "train-motion"));
    Adam opt(cfg.lr);
    double initial = -1.0;
    int diverged_run = 0;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        int64_t t = rs.uniform_int(0, sched.num_steps - 1);
        Tensor eps = rs.normal_tensor(ref.latent.shape);
        VideoTensor x_t = add_noise({ref.latent, Space::Latent}, {eps, Space::Latent}, t, sched);

        // appearance-free target from the frozen base model (detached)
        Tensor eps_ap = model.denoise(x_t, res.c_ap, t, {}).first;
        Tensor target = appearance_free_target(eps, eps_ap, cfg.omega);

        Tape tape;
        ForwardOpts opts;
        opts.train_adapters = true;
        opts.capture_maps = false;
        ParamBinding b;
        int xid = tape.leaf(x_t.data, false);
        DenoiseResult out = model.forward(tape, xid, c_m, t, {&res.adapter}, opts, &b);
        int loss = tape.mse(out.eps, tape.constant(target));
        tape.backward(loss);
        double lv = tape.val(loss)[0];
        res.log.push_back({step, lv, eps_ap.norm(), lv});

        for (auto& [name, layer] : res.adapter.layers) {
            for (const char* which : {"down", "up"}) {
                std::string key = ParamBinding::lora_key(0, name, which);
                Tensor& targetp = which[0] == 'd' ? layer.down : layer.up;
                opt.step(key, targetp, tape.grad_or_zero(b.lora.at(key)));
            }
        }

        if (initial < 0) initial = lv;
        diverged_run = lv > 10.0 * initial ? diverged_run + 1 : 0;
        if (diverged_run >= 50)
            throw training_failure("train_motion: diverged", format_train_log(res.log));
    }
    return res;
}

}  // namespace vidfuse
