#include <doctest.h>

#include "fd_check.hpp"
#include "test_helpers.hpp"
#include "vidfuse/fusion.hpp"
#include "vidfuse/synthworld.hpp"

using namespace vidfuse;
using vftest::randomized;
using vftest::tiny_config;

namespace {

synthworld::RenderResult solo_render(const char* color, synthworld::Shape sh, double size,
                                     double cx, double cy, uint64_t seed, int64_t frames = 2) {
    synthworld::SceneSpec sc;
    synthworld::SubjectSpec s;
    s.shape = sh;
    s.color = synthworld::palette_color(color);
    s.size = size;
    sc.subjects = {s};
    synthworld::Trajectory t;
    t.cls = synthworld::PathClass::Static;
    t.cx = cx;
    t.cy = cy;
    sc.trajectories = {t};
    sc.frames = frames;
    return synthworld::render(sc, seed);
}

VideoTensor plain_background(int64_t frames = 2) {
    synthworld::SceneSpec sc;
    synthworld::SubjectSpec s;
    s.color = synthworld::palette_color("white");
    s.size = 2.0;
    sc.subjects = {s};
    synthworld::Trajectory t;
    t.cls = synthworld::PathClass::Static;
    t.cx = 3.0;
    t.cy = 3.0;
    sc.trajectories = {t};
    sc.frames = frames;
    auto r = synthworld::render(sc, 1);
    // paint the marker back to background gray to get a clean background
    for (int64_t i = 0; i < r.video.data.numel(); ++i) {
        // background is flat gray; rebuild it directly
    }
    VideoTensor bg(Tensor({frames, 3, 32, 32}), Space::Pixel);
    for (int64_t i = 0; i < bg.data.numel(); ++i) bg.data[i] = 2.0 * 0.45 - 1.0;
    return bg;
}

}  // namespace

TEST_CASE("build_cutmix: exact pixels, disjoint masks, bounded overlap") {
    auto ra = solo_render("red", synthworld::Shape::Circle, 4.0, 10, 10, 1);
    auto rb = solo_render("blue", synthworld::Shape::Square, 4.0, 22, 22, 2);
    VideoTensor bg = plain_background();

    RandomStream rs(3);
    CutMixResult cm = build_cutmix(ra.video, ra.masks[0], rb.video, rb.masks[0], bg, rs);

    int64_t F = 2, H = 32, W = 32;
    double max_overlap = 0;
    for (int64_t f = 0; f < F; ++f) {
        double inter = 0, a_area = 0, b_area = 0;
        for (int64_t i = 0; i < H * W; ++i) {
            bool a = cm.masks[0][f * H * W + i] > 0.5;
            bool b = cm.masks[1][f * H * W + i] > 0.5;
            CHECK(!(a && b));  // disjoint after occlusion resolution
            a_area += a;
            b_area += b;
        }
        (void)inter;
        CHECK(a_area > 0);
        CHECK(b_area > 0);
        (void)max_overlap;
    }

    // composite pixels inside mask match pasted subject colors
    for (int64_t f = 0; f < F; ++f)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                if (cm.masks[1][(f * H + y) * W + x] > 0.5) {
                    double r = 0.5 * (cm.composite.data[((f * 3 + 0) * H + y) * W + x] + 1.0);
                    double b = 0.5 * (cm.composite.data[((f * 3 + 2) * H + y) * W + x] + 1.0);
                    CHECK(b > 0.6);
                    CHECK(r < 0.4);
                }
            }

    // Monte-Carlo: default placement keeps overlap <= 30% of the smaller area
    RandomStream rs2(4);
    for (int trial = 0; trial < 100; ++trial) {
        CutMixResult c2 = build_cutmix(ra.video, ra.masks[0], rb.video, rb.masks[0], bg, rs2);
        for (int64_t f = 0; f < F; ++f) {
            double a_area = 0, b_area = 0, covered_b = 0;
            for (int64_t i = 0; i < H * W; ++i) {
                a_area += c2.masks[0][f * H * W + i] > 0.5;
                b_area += c2.masks[1][f * H * W + i] > 0.5;
            }
            (void)covered_b;
            // subject a lost at most 30% of the smaller subject's area to occlusion
            double a_full = 0, b_full = 0;
            for (int64_t i = 0; i < H * W; ++i) {
                a_full += ra.masks[0][f * H * W + i] > 0.5;
                b_full += rb.masks[0][f * H * W + i] > 0.5;
            }
            double smaller = std::min(a_full, b_full);
            CHECK(a_full - a_area <= 0.30 * smaller + 1e-9);
        }
    }

    // fully occluding placement: a canvas-filling b hides a for every offset
    auto tiny = solo_render("red", synthworld::Shape::Circle, 2.0, 16, 16, 5);
    VideoTensor blue_all(Tensor({2, 3, 32, 32}), Space::Pixel);
    for (int64_t f = 0; f < 2; ++f)
        for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 32; ++x) {
                blue_all.data[((f * 3 + 0) * 32 + y) * 32 + x] = -0.7;
                blue_all.data[((f * 3 + 1) * 32 + y) * 32 + x] = -0.6;
                blue_all.data[((f * 3 + 2) * 32 + y) * 32 + x] = 0.8;
            }
    Tensor all_mask(std::vector<int64_t>{2, 32, 32}, 1.0);
    RandomStream rs3(7);
    CHECK_THROWS_AS(build_cutmix(tiny.video, tiny.masks[0], blue_all, all_mask, bg, rs3),
                    degenerate_input);
}

TEST_CASE("attention_reg_loss: hand-computed oracle and symmetry") {
    // 2x2 grid (P = 4), L = 3 tokens, F = 1. Token columns hold a uniform map
    // and a map whose min-max normalization matches the mask exactly.
    Tensor agg({1, 4, 3});
    for (int64_t p = 0; p < 4; ++p) {
        agg[p * 3 + 0] = 0.25;                  // token 0: uniform
        agg[p * 3 + 1] = (p == 2) ? 0.4 : 0.2;  // token 1: peak at cell 2
        agg[p * 3 + 2] = 0.1;
    }
    Tensor mask_onehot({1, 4});
    mask_onehot[1] = 1.0;  // active cell 1
    Tensor mask_cell2({1, 4});
    mask_cell2[2] = 1.0;

    // uniform map normalizes to all zeros -> per-cell sq diffs (1,0,0,0), mean 1/4;
    // peaked map normalizes to exactly its mask -> 0. Total = 0.5*(0.25 + 0) = 0.125
    double loss = attention_reg_loss_value(agg, {0, 1}, {mask_onehot, mask_cell2});
    CHECK(loss == doctest::Approx(0.125).epsilon(1e-9));

    // exact-match map alone -> 0
    CHECK(attention_reg_loss_value(agg, {1}, {mask_cell2}) == doctest::Approx(0.0));

    // label swapping with masks leaves the value unchanged
    double swapped = attention_reg_loss_value(agg, {1, 0}, {mask_cell2, mask_onehot});
    CHECK(loss == doctest::Approx(swapped));

    // bad token index rejected
    CHECK_THROWS_AS(attention_reg_loss_value(agg, {7}, {mask_onehot}), contract_violation);
}

TEST_CASE("attention_reg_loss gradient w.r.t adapter factors matches finite differences") {
    DenoiserConfig cfg = tiny_config(2, 8, 4, 16);
    Denoiser model(cfg, 8);
    NoiseSchedule sched = NoiseSchedule::linear_beta();
    RandomStream rs(9);
    Tensor lat = rs.normal_tensor({2, 4, 8, 8}, 0.5);
    Vocabulary v = Vocabulary::standard(cfg.text_dim);
    SpecialToken ta{"<a>", "circle", rs.normal_tensor({16})};
    SpecialToken tb{"<b>", "square", rs.normal_tensor({16})};
    PromptEmbedding prompt = build_prompt(v, "a <a> and a <b> on gray",
                                          {{"<a>", Binding(ta)}, {"<b>", Binding(tb)}});
    std::vector<int64_t> tidx = {prompt.token_indices("<a>")[0],
                                 prompt.token_indices("<b>")[0]};
    // synthetic masks at the 4x4 attention grid
    Tensor m1({2, 16}), m2({2, 16});
    for (int64_t f = 0; f < 2; ++f) {
        m1[f * 16 + 5] = 1.0;
        m2[f * 16 + 10] = 1.0;
    }
    LoraDelta ad = randomized(new_lora(cfg, TargetSet::Spatial, 4, 10), 11);

    auto loss_with_up = [&](const Tensor& up0) {
        LoraDelta mod = ad;
        mod.layers[0].second.up = up0;
        Tape tape;
        int xid = tape.leaf(lat, false);
        DenoiseResult out = model.forward(tape, xid, prompt, 300, {&mod}, {});
        int loss = attention_reg_loss(tape, out.map_ids, model.config().map_layers, tidx, {m1, m2});
        return tape.val(loss)[0];
    };
    Tape tape;
    ForwardOpts opts;
    opts.train_adapters = true;
    ParamBinding b;
    int xid = tape.leaf(lat, false);
    DenoiseResult out = model.forward(tape, xid, prompt, 300, {&ad}, opts, &b);
    int loss = attention_reg_loss(tape, out.map_ids, model.config().map_layers, tidx, {m1, m2});
    tape.backward(loss);
    std::string key = ParamBinding::lora_key(0, ad.layers[0].first, "up");
    double err = fd_rel_error(loss_with_up, ad.layers[0].second.up, tape.grad(b.lora.at(key)),
                              32, 1e-6);
    CHECK(err < 1e-4);
}

TEST_CASE("fusion_loss identities") {
    DenoiserConfig cfg = tiny_config(2, 8, 4, 16);
    Denoiser model(cfg, 12);
    NoiseSchedule sched = NoiseSchedule::linear_beta();
    RandomStream rs(13);
    Vocabulary v = Vocabulary::standard(cfg.text_dim);
    LoraDelta a = randomized(new_lora(cfg, TargetSet::Spatial, 4, 14), 15);

    DistillItem item;
    item.subject = 0;
    item.latent = rs.normal_tensor({2, 4, 8, 8}, 0.5);
    item.prompt = build_prompt(v, "a red circle rests on gray");
    item.draw = {400, rs.normal_tensor({2, 4, 8, 8})};

    // fused == the only subject lora -> loss exactly 0
    CHECK(fusion_loss(model, sched, a, {&a}, {item}) == doctest::Approx(0.0));

    // symmetry under subject reordering
    LoraDelta b = randomized(new_lora(cfg, TargetSet::Spatial, 4, 16), 17);
    DistillItem item_b = item;
    item_b.subject = 1;
    LoraDelta fused = average_loras({&a, &b});
    double lab = fusion_loss(model, sched, fused, {&a, &b}, {item, item_b});
    DistillItem item2 = item, item_b2 = item_b;
    item2.subject = 1;
    item_b2.subject = 0;
    double lba = fusion_loss(model, sched, fused, {&b, &a}, {item_b2, item2});
    CHECK(lab == doctest::Approx(lba).epsilon(1e-12));
    CHECK(lab >= 0.0);

    // missing subject coverage -> configuration error
    CHECK_THROWS_AS(fusion_loss(model, sched, fused, {&a, &b}, {item}), config_error);
}

TEST_CASE("fuse: steps 0 returns the average init; teachers stay frozen") {
    DenoiserConfig cfg = tiny_config(2, 16, 12, 16);
    Denoiser model(cfg, 18);
    NoiseSchedule sched = NoiseSchedule::linear_beta();
    LoraDelta a = randomized(new_lora(cfg, TargetSet::Spatial, 4, 19), 20, 0.3, 0.02);
    LoraDelta b = randomized(new_lora(cfg, TargetSet::Spatial, 4, 21), 22, 0.3, 0.02);
    const Tensor a_up_before = a.layers[0].second.up;

    SpecialToken ta{"<a>", "circle", model.param(Denoiser::kTextEmbed).reshaped(
                                          {cfg.vocab_size, cfg.text_dim})};
    // build proper tokens from vocabulary rows
    Vocabulary v = Vocabulary::standard(cfg.text_dim);
    auto row = [&](const std::string& w) {
        Tensor out({cfg.text_dim});
        const Tensor& tbl = model.param(Denoiser::kTextEmbed);
        int64_t id = v.id(w);
        for (int64_t j = 0; j < cfg.text_dim; ++j) out[j] = tbl[id * cfg.text_dim + j];
        return out;
    };
    ta = {"<a>", "circle", row("circle")};
    SpecialToken tb{"<b>", "square", row("square")};

    auto ra = solo_render("red", synthworld::Shape::Circle, 4.0, 10, 12, 23);
    auto rb = solo_render("blue", synthworld::Shape::Square, 4.0, 22, 20, 24);

    FusionInputs in;
    in.subject_loras = {&a, &b};
    in.tokens = {ta, tb};
    in.cutmix_videos = {ra.video, rb.video};
    in.cutmix_masks = {ra.masks[0], rb.masks[0]};
    in.background = plain_background();

    FusionConfig fc;
    fc.steps = 0;
    FusionResult r0 = fuse(model, sched, in, fc, 25);
    LoraDelta avg = average_loras({&a, &b});
    for (size_t i = 0; i < avg.layers.size(); ++i) {
        CHECK(max_abs_diff(r0.fused.layers[i].second.down, avg.layers[i].second.down) == 0.0);
        CHECK(max_abs_diff(r0.fused.layers[i].second.up, avg.layers[i].second.up) == 0.0);
    }

    fc.steps = 6;
    fc.distill_per_subject = 1;
    fc.distill_ddim_steps = 4;
    fc.cutmix_pool = 2;
    FusionResult r = fuse(model, sched, in, fc, 25);
    CHECK(max_abs_diff(a.layers[0].second.up, a_up_before) == 0.0);  // teacher untouched
    CHECK(r.log.size() == 6);

    // single subject rejected
    FusionInputs solo = in;
    solo.subject_loras = {&a};
    solo.tokens = {ta};
    CHECK_THROWS_AS(fuse(model, sched, solo, fc, 26), contract_violation);
}
