#include "vidfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "vidfuse/adam.hpp"
#include "vidfuse/synthworld.hpp"

namespace vidfuse {

namespace {

double mask_area(const Tensor& m, int64_t frame, int64_t plane) {
    double s = 0;
    for (int64_t i = 0; i < plane; ++i) s += m[frame * plane + i];
    return s;
}

struct Placement {
    int64_t ax = 0, ay = 0, bx = 0, by = 0;
};

double worst_overlap(const Tensor& ma, const Tensor& mb, const Placement& p, int64_t F,
                     int64_t H, int64_t W) {
    double worst = 0;
    for (int64_t f = 0; f < F; ++f) {
        double inter = 0, area_a = 0, area_b = 0;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t ya = y - p.ay, xa = x - p.ax;
                int64_t yb = y - p.by, xb = x - p.bx;
                bool a = ya >= 0 && ya < H && xa >= 0 && xa < W &&
                         ma[(f * H + ya) * W + xa] > 0.5;
                bool b = yb >= 0 && yb < H && xb >= 0 && xb < W &&
                         mb[(f * H + yb) * W + xb] > 0.5;
                area_a += a;
                area_b += b;
                inter += a && b;
            }
        double small = std::min(area_a, area_b);
        if (small <= 0) return 1.0;  // a subject left the canvas entirely
        worst = std::max(worst, inter / small);
    }
    return worst;
}

}  // namespace

CutMixResult build_cutmix(const VideoTensor& video_a, const Tensor& masks_a,
                          const VideoTensor& video_b, const Tensor& masks_b,
                          const VideoTensor& background, RandomStream& placement) {
    if (video_a.space != Space::Pixel || video_b.space != Space::Pixel ||
        background.space != Space::Pixel)
        throw contract_violation("build_cutmix: pixel-space inputs required");
    require_same_shape(video_a.data, background.data, "build_cutmix");
    require_same_shape(video_b.data, background.data, "build_cutmix");
    int64_t F = video_a.frames(), H = video_a.height(), W = video_a.width();
    int64_t plane = H * W;
    if (mask_area(masks_a, 0, F * plane) <= 0 || mask_area(masks_b, 0, F * plane) <= 0)
        throw contract_violation("build_cutmix: masks must be nonempty");

    // default placement sampler: random shifts, overlap capped at 30% of the
    // smaller subject's area across all frames
    Placement best{};
    double best_overlap = 2.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
        Placement p;
        p.ax = placement.uniform_int(-6, 6);
        p.ay = placement.uniform_int(-6, 6);
        p.bx = placement.uniform_int(-6, 6);
        p.by = placement.uniform_int(-6, 6);
        double ov = worst_overlap(masks_a, masks_b, p, F, H, W);
        if (ov < best_overlap) {
            best_overlap = ov;
            best = p;
        }
        if (ov <= 0.30) break;
    }

    CutMixResult out;
    out.composite = VideoTensor(background.data, Space::Pixel);
    out.masks = {Tensor({F, H, W}), Tensor({F, H, W})};
    auto paste = [&](const VideoTensor& vid, const Tensor& mask, int64_t dx, int64_t dy,
                     size_t which) {
        for (int64_t f = 0; f < F; ++f)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    int64_t ys = y - dy, xs = x - dx;
                    if (ys < 0 || ys >= H || xs < 0 || xs >= W) continue;
                    if (mask[(f * H + ys) * W + xs] <= 0.5) continue;
                    for (int64_t c = 0; c < 3; ++c)
                        out.composite.data[((f * 3 + c) * H + y) * W + x] =
                            vid.data[((f * 3 + c) * H + ys) * W + xs];
                    out.masks[which][(f * H + y) * W + x] = 1.0;
                    if (which == 1) out.masks[0][(f * H + y) * W + x] = 0.0;
                }
    };
    paste(video_a, masks_a, best.ax, best.ay, 0);
    paste(video_b, masks_b, best.bx, best.by, 1);

    for (size_t s = 0; s < 2; ++s)
        if (out.masks[s].sum() == 0.0)
            throw degenerate_input("build_cutmix: subject fully occluded in every frame");
    return out;
}

Tensor downsample_mask(const Tensor& mask_fhw, int64_t gh, int64_t gw) {
    if (mask_fhw.ndim() != 3) throw contract_violation("downsample_mask: expects [F, H, W]");
    int64_t F = mask_fhw.shape[0], H = mask_fhw.shape[1], W = mask_fhw.shape[2];
    if (H % gh != 0 || W % gw != 0)
        throw contract_violation("downsample_mask: grid must divide mask size");
    int64_t by = H / gh, bx = W / gw;
    Tensor out({F, gh * gw});
    for (int64_t f = 0; f < F; ++f)
        for (int64_t y = 0; y < gh; ++y)
            for (int64_t x = 0; x < gw; ++x) {
                double s = 0;
                for (int64_t yy = 0; yy < by; ++yy)
                    for (int64_t xx = 0; xx < bx; ++xx)
                        s += mask_fhw[(f * H + y * by + yy) * W + x * bx + xx];
                out[f * (gh * gw) + y * gw + x] = s / static_cast<double>(by * bx);
            }
    return out;
}

double fusion_loss(const Denoiser& model, const NoiseSchedule& sched, const LoraDelta& fused,
                   const std::vector<const LoraDelta*>& subject_loras,
                   const std::vector<DistillItem>& batch) {
    if (batch.empty()) throw contract_violation("fusion_loss: empty batch");
    std::set<size_t> covered;
    for (const auto& item : batch) covered.insert(item.subject);
    for (size_t n = 0; n < subject_loras.size(); ++n)
        if (!covered.count(n))
            throw config_error("fusion_loss: missing distill videos for subject " +
                               std::to_string(n));

    std::vector<double> per_subject(subject_loras.size(), 0.0);
    std::vector<int64_t> counts(subject_loras.size(), 0);
    for (const auto& item : batch) {
        if (item.subject >= subject_loras.size())
            throw config_error("fusion_loss: bad subject index");
        VideoTensor x_t = add_noise({item.latent, Space::Latent}, {item.draw.eps, Space::Latent},
                                    item.draw.t, sched);
        Tensor teacher =
            model.denoise(x_t, item.prompt, item.draw.t, {subject_loras[item.subject]}).first;
        Tensor student = model.denoise(x_t, item.prompt, item.draw.t, {&fused}).first;
        Tensor diff = axpy(student, -1.0, teacher);
        per_subject[item.subject] += diff.sq_norm() / static_cast<double>(diff.numel());
        counts[item.subject] += 1;
    }
    double total = 0;
    for (size_t n = 0; n < per_subject.size(); ++n)
        total += per_subject[n] / static_cast<double>(counts[n]);
    return total / static_cast<double>(per_subject.size());
}

int attention_reg_loss(Tape& tape, const AttnMapIds& map_ids,
                       const std::vector<std::string>& layers,
                       const std::vector<int64_t>& subject_token_indices,
                       const std::vector<Tensor>& gt_masks) {
    if (subject_token_indices.size() != gt_masks.size() || gt_masks.empty())
        throw contract_violation("attention_reg_loss: one mask per subject token");
    int agg = aggregate_maps(tape, map_ids.sca, layers);  // [F, P, L]
    const Tensor& av = tape.val(agg);
    int64_t F = av.shape[0], P = av.shape[1], L = av.shape[2];

    int total = -1;
    for (size_t s = 0; s < subject_token_indices.size(); ++s) {
        int64_t ti = subject_token_indices[s];
        if (ti < 0 || ti >= L)
            throw contract_violation("attention_reg_loss: token index outside prompt");
        if (gt_masks[s].numel() != F * P)
            throw contract_violation("attention_reg_loss: mask resolution mismatch");
        // select the token's column: [F, P, L] -> [F, P]
        std::vector<int64_t> idx(static_cast<size_t>(F * P));
        for (int64_t i = 0; i < F * P; ++i) idx[static_cast<size_t>(i)] = i * L + ti;
        int col = tape.gather(agg, GatherPlan::make({F, P}, F * P * L, std::move(idx)));
        // per-frame min-max normalization
        int mn = tape.min_last(col);
        int mx = tape.max_last(col);
        int rng = tape.add_scalar(tape.sub(mx, mn), 1e-8);
        int normed = tape.div(tape.sub(col, mn), rng);
        int li = tape.mse(normed, tape.constant(gt_masks[s].reshaped({F, P})));
        total = total < 0 ? li : tape.add(total, li);
    }
    return tape.scale(total, 0.5);
}

double attention_reg_loss_value(const Tensor& agg_sca,
                                const std::vector<int64_t>& subject_token_indices,
                                const std::vector<Tensor>& gt_masks) {
    Tape tape;
    int agg = tape.constant(agg_sca);
    AttnMapIds ids;
    ids.sca.emplace_back("m0", agg);
    int loss = attention_reg_loss(tape, ids, {"m0"}, subject_token_indices, gt_masks);
    return tape.val(loss)[0];
}

FusionResult fuse(Denoiser& model, const NoiseSchedule& sched, const FusionInputs& in,
                  const FusionConfig& cfg, uint64_t seed) {
    size_t N = in.subject_loras.size();
    if (N < 2) throw contract_violation("fuse: at least two subject adapters");
    for (const LoraDelta* d : in.subject_loras) {
        if (d->target_set != TargetSet::Spatial)
            throw contract_violation("fuse: subject adapters must be spatial");
        if (d->rank != in.subject_loras[0]->rank)
            throw contract_violation("fuse: ranks must match");
    }
    if (in.tokens.size() != N) throw contract_violation("fuse: one token per subject");

    FusionResult res;
    res.fused = average_loras(in.subject_loras);
    res.fused.base_fingerprint = in.subject_loras[0]->base_fingerprint;
    if (cfg.steps == 0) return res;

    Vocabulary vocab = Vocabulary::standard(model.config().text_dim);
    RandomStream rs(derive_seed(seed, "fuse"));
    const auto& bgs = synthworld::background_words();

    // distillation targets: videos generated once by each subject adapter
    res.distill_latents.resize(N);
    std::vector<std::vector<PromptEmbedding>> distill_prompts(N);
    for (size_t n = 0; n < N; ++n) {
        for (int64_t k = 0; k < cfg.distill_per_subject; ++k) {
            SCSConfig scfg;
            scfg.tau = 0;
            scfg.steps = cfg.distill_ddim_steps;
            scfg.guidance = cfg.distill_guidance;
            PromptEmbedding p = build_prompt(
                vocab, "a <tok> on " + bgs[static_cast<size_t>(k) % bgs.size()],
                {{"<tok>", Binding(in.tokens[n])}});
            SampleResult sr =
                naive_sample(model, sched, {in.subject_loras[n]}, p, scfg,
                             derive_seed(seed, "distill:" + std::to_string(n) + ":" +
                                                   std::to_string(k)));
            res.distill_latents[n].push_back(sr.latent.data);
            distill_prompts[n].push_back(std::move(p));
        }
    }

    // CutMix composites; pairs rotate round-robin when N > 2
    std::vector<std::array<size_t, 2>> pair_list;
    for (size_t i = 0; i < N; ++i)
        for (size_t j = i + 1; j < N; ++j) pair_list.push_back({i, j});
    struct Composite {
        Tensor latent;
        PromptEmbedding prompt;
        std::vector<int64_t> token_idx;
        std::vector<Tensor> masks_attn;
    };
    std::vector<Composite> composites;
    int64_t gh = model.config().height / 2, gw = model.config().width / 2;
    for (int64_t k = 0; k < cfg.cutmix_pool; ++k) {
        auto [ia, ib] = pair_list[static_cast<size_t>(k) % pair_list.size()];
        CutMixResult cm = build_cutmix(in.cutmix_videos[ia], in.cutmix_masks[ia],
                                       in.cutmix_videos[ib], in.cutmix_masks[ib], in.background,
                                       rs);
        Composite c;
        c.latent = synthworld::to_latent(cm.composite).data;
        c.prompt = build_prompt(vocab, "a <ta> and a <tb> on gray",
                                {{"<ta>", Binding(in.tokens[ia])},
                                 {"<tb>", Binding(in.tokens[ib])}});
        c.token_idx = {c.prompt.token_indices(in.tokens[ia].name)[0],
                       c.prompt.token_indices(in.tokens[ib].name)[0]};
        c.masks_attn = {downsample_mask(cm.masks[0], gh, gw), downsample_mask(cm.masks[1], gh, gw)};
        composites.push_back(std::move(c));
    }

    Adam opt(cfg.lr);
    double initial = -1.0;
    int diverged_run = 0;
    auto adapter_step = [&](Tape& tape, ParamBinding& b, double weight) {
        for (auto& [name, layer] : res.fused.layers) {
            for (const char* which : {"down", "up"}) {
                std::string key = ParamBinding::lora_key(0, name, which);
                Tensor g = tape.grad_or_zero(b.lora.at(key));
                if (weight != 1.0)
                    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= weight;
                Tensor& target = which[0] == 'd' ? layer.down : layer.up;
                opt.step(key, target, g);
            }
        }
    };

    for (int64_t step = 0; step < cfg.steps; ++step) {
        double l_fusion = 0, l_attn = 0;
        if (step % 2 == 0) {
            // distillation step
            size_t n = static_cast<size_t>(step / 2) % N;
            size_t k = static_cast<size_t>(
                rs.uniform_int(0, static_cast<int64_t>(res.distill_latents[n].size()) - 1));
            int64_t t = rs.uniform_int(0, sched.num_steps - 1);
            Tensor eps = rs.normal_tensor(res.distill_latents[n][k].shape);
            VideoTensor x_t = add_noise({res.distill_latents[n][k], Space::Latent},
                                        {eps, Space::Latent}, t, sched);
            Tensor teacher =
                model.denoise(x_t, distill_prompts[n][k], t, {in.subject_loras[n]}).first;

            Tape tape;
            ForwardOpts opts;
            opts.train_adapters = true;
            opts.capture_maps = false;
            ParamBinding b;
            int xid = tape.leaf(x_t.data, false);
            DenoiseResult out = model.forward(tape, xid, distill_prompts[n][k], t, {&res.fused},
                                              opts, &b);
            int loss = tape.mse(out.eps, tape.constant(teacher));
            tape.backward(loss);
            l_fusion = tape.val(loss)[0];
            adapter_step(tape, b, 1.0);
        } else if (cfg.lambda2 > 0) {
            // CutMix attention step
            const Composite& c = composites[static_cast<size_t>(step / 2) %
                                            composites.size()];
            int64_t t = rs.uniform_int(0, sched.num_steps - 1);
            Tensor eps = rs.normal_tensor(c.latent.shape);
            VideoTensor x_t = add_noise({c.latent, Space::Latent}, {eps, Space::Latent}, t,
                                        sched);
            Tape tape;
            ForwardOpts opts;
            opts.train_adapters = true;
            ParamBinding b;
            int xid = tape.leaf(x_t.data, false);
            DenoiseResult out = model.forward(tape, xid, c.prompt, t, {&res.fused}, opts, &b);
            int loss = attention_reg_loss(tape, out.map_ids, model.config().map_layers,
                                          c.token_idx, c.masks_attn);
            tape.backward(loss);
            l_attn = tape.val(loss)[0];
            adapter_step(tape, b, cfg.lambda2);
        }
        double total = l_fusion + cfg.lambda2 * l_attn;
        res.log.push_back({step, l_fusion, l_attn, total});
        if (step % 2 == 0) {
            if (initial < 0) initial = l_fusion;
            diverged_run = l_fusion > 10.0 * initial ? diverged_run + 1 : 0;
            if (diverged_run >= 50)
                throw training_failure("fuse: diverged", format_train_log(res.log));
        }
    }
    return res;
}

}  // namespace vidfuse
