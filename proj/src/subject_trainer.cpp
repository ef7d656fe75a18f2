#include "vidfuse/subject_trainer.hpp"

#include <sstream>

#include "vidfuse/adam.hpp"

namespace vidfuse {

namespace {

void require_spatial(const LoraDelta& adapter) {
    if (adapter.target_set != TargetSet::Spatial)
        throw contract_violation("subject adapter must target spatial layers only");
}

PromptEmbedding token_prompt(const Denoiser& model, const SpecialToken& token) {
    Vocabulary vocab = Vocabulary::standard(model.config().text_dim);
    return build_prompt(vocab, "a <tok>", {{"<tok>", Binding(token)}});
}

}  // namespace

double subject_loss(const Denoiser& model, const NoiseSchedule& sched, const Tensor& image_latent,
                    const SpecialToken& token, const LoraDelta& adapter, const NoiseDraw& draw) {
    require_spatial(adapter);
    VideoTensor img{image_latent, Space::Latent};
    if (img.frames() != 1) throw contract_violation("subject_loss: expects single-frame images");
    VideoTensor x_t = add_noise(img, {draw.eps, Space::Latent}, draw.t, sched);
    PromptEmbedding p = token_prompt(model, token);
    Tensor pred = model.denoise(x_t, p, draw.t, {&adapter}).first;
    Tensor diff = axpy(pred, -1.0, draw.eps);
    return diff.sq_norm() / static_cast<double>(diff.numel());
}

double regularization_loss(const Denoiser& model, const NoiseSchedule& sched, const AuxItem& aux,
                           const LoraDelta& adapter, const NoiseDraw& draw) {
    require_spatial(adapter);
    VideoTensor x_t = add_noise({aux.latent, Space::Latent}, {draw.eps, Space::Latent}, draw.t,
                                sched);
    Tensor pred = model.denoise(x_t, aux.prompt, draw.t, {&adapter}).first;
    Tensor diff = axpy(pred, -1.0, draw.eps);
    return diff.sq_norm() / static_cast<double>(diff.numel());
}

SubjectTrainResult train_subject(Denoiser& model, const NoiseSchedule& sched,
                                 const std::vector<Tensor>& subject_latents,
                                 const std::vector<AuxItem>& aux_pool,
                                 const SubjectTrainConfig& cfg, uint64_t seed) {
    if (subject_latents.empty() || subject_latents.size() > 8)
        throw contract_violation("train_subject: 1-8 subject images required");
    if (cfg.lambda1 < 0) throw contract_violation("train_subject: lambda1 >= 0");
    if (aux_pool.empty() && cfg.lambda1 > 0)
        throw contract_violation("train_subject: aux pool required when lambda1 > 0");

    SubjectTrainResult res;
    res.adapter = new_lora(model.config(), TargetSet::Spatial, cfg.rank,
                           derive_seed(seed, "subject-lora"), cfg.lora_scale);
    res.adapter.base_fingerprint = model.weights_fingerprint();
    {
        Vocabulary vocab = Vocabulary::standard(model.config().text_dim);
        int64_t id = vocab.id(cfg.init_token);
        const Tensor& table = model.param(Denoiser::kTextEmbed);
        int64_t D = model.config().text_dim;
        res.token.name = cfg.token_name;
        res.token.superclass = cfg.init_token;
        res.token.embedding = Tensor({D});
        for (int64_t j = 0; j < D; ++j) res.token.embedding[j] = table[id * D + j];
    }
    if (cfg.steps == 0) return res;

    RandomStream rs(derive_seed(seed, "train-subject"));
    Adam opt_lora(cfg.lr_lora);
    Adam opt_token(cfg.lr_token);
    Vocabulary vocab = Vocabulary::standard(model.config().text_dim);

    double initial_total = -1.0;
    int diverged_run = 0;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        size_t img_i = static_cast<size_t>(rs.uniform_int(0, static_cast<int64_t>(
                                                                 subject_latents.size()) - 1));
        const Tensor& img = subject_latents[img_i];

        // subject term
        int64_t t1 = rs.uniform_int(0, sched.num_steps - 1);
        Tensor eps1 = rs.normal_tensor(img.shape);
        VideoTensor x1 = add_noise({img, Space::Latent}, {eps1, Space::Latent}, t1, sched);
        PromptEmbedding p1 =
            build_prompt(vocab, "a <tok>", {{"<tok>", Binding(res.token)}});

        Tape tape1;
        ForwardOpts opts;
        opts.train_adapters = true;
        opts.train_specials = true;
        opts.capture_maps = false;
        ParamBinding b1;
        int x1id = tape1.leaf(x1.data, false);
        DenoiseResult o1 = model.forward(tape1, x1id, p1, t1, {&res.adapter}, opts, &b1);
        int l1 = tape1.mse(o1.eps, tape1.constant(eps1));
        tape1.backward(l1);
        double l_sub = tape1.val(l1)[0];

        // regularization term on an aux pair
        double l_reg = 0.0;
        Tape tape2;
        ParamBinding b2;
        bool have_reg = cfg.lambda1 > 0 && !aux_pool.empty();
        if (have_reg) {
            const AuxItem& aux = aux_pool[static_cast<size_t>(
                rs.uniform_int(0, static_cast<int64_t>(aux_pool.size()) - 1))];
            int64_t t2 = rs.uniform_int(0, sched.num_steps - 1);
            Tensor eps2 = rs.normal_tensor(aux.latent.shape);
            VideoTensor x2 = add_noise({aux.latent, Space::Latent}, {eps2, Space::Latent}, t2,
                                       sched);
            ForwardOpts opts2 = opts;
            opts2.train_specials = false;
            int x2id = tape2.leaf(x2.data, false);
            DenoiseResult o2 = model.forward(tape2, x2id, aux.prompt, t2, {&res.adapter}, opts2,
                                             &b2);
            int l2 = tape2.mse(o2.eps, tape2.constant(eps2));
            tape2.backward(l2);
            l_reg = tape2.val(l2)[0];
        }

        double total = l_sub + cfg.lambda1 * l_reg;
        res.log.push_back({step, l_sub, l_reg, total});

        // combined adapter gradient: g_sub + lambda1 * g_reg
        for (auto& [name, layer] : res.adapter.layers) {
            for (const char* which : {"down", "up"}) {
                std::string key = ParamBinding::lora_key(0, name, which);
                Tensor g = tape1.grad_or_zero(b1.lora.at(key));
                if (have_reg) {
                    const Tensor g2 = tape2.grad_or_zero(b2.lora.at(key));
                    for (int64_t i = 0; i < g.numel(); ++i) g[i] += cfg.lambda1 * g2[i];
                }
                Tensor& target = which[0] == 'd' ? layer.down : layer.up;
                opt_lora.step(key, target, g);
            }
        }
        for (auto& [slot, leaf] : b1.special_slots) {
            (void)slot;
            opt_token.step("token", res.token.embedding,
                           tape1.grad(leaf).reshaped({model.config().text_dim}));
        }

        if (initial_total < 0) initial_total = total;
        diverged_run = total > 10.0 * initial_total ? diverged_run + 1 : 0;
        if (diverged_run >= 50)
            throw training_failure("train_subject: diverged", format_train_log(res.log));
    }
    return res;
}

std::string format_train_log(const std::vector<TrainLogRow>& log) {
    std::ostringstream os;
    os << "step\tl_sub\tl_reg\ttotal\n";
    for (const auto& r : log)
        os << r.step << "\t" << r.l_sub << "\t" << r.l_reg << "\t" << r.total << "\n";
    return os.str();
}

}  // namespace vidfuse
