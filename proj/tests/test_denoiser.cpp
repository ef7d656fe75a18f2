#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "vidfuse/denoiser.hpp"

using namespace vidfuse;

namespace {

DenoiserConfig small_cfg() {
    DenoiserConfig cfg;
    cfg.channels = 4;
    cfg.height = 8;
    cfg.width = 8;
    cfg.frames = 2;
    cfg.model_width = 16;
    cfg.heads = 2;
    cfg.text_dim = 16;
    cfg.mid_blocks = 1;
    cfg.vocab_size = static_cast<int64_t>(Vocabulary::standard_words().size());
    return cfg;
}

PromptEmbedding simple_prompt(const DenoiserConfig& cfg) {
    Vocabulary v = Vocabulary::standard(cfg.text_dim);
    return build_prompt(v, "a red circle bounces on gray");
}

}  // namespace

TEST_CASE("zero-delta adapters leave the output bit-identical") {
    DenoiserConfig cfg = small_cfg();
    Denoiser model(cfg, 1);
    RandomStream rs(2);
    VideoTensor x{rs.normal_tensor({2, 4, 8, 8}), Space::Latent};
    PromptEmbedding p = simple_prompt(cfg);

    auto [base_eps, base_maps] = model.denoise(x, p, 100);

    LoraDelta sub = new_lora(cfg, TargetSet::Spatial, 4, 7);
    LoraDelta mot = new_lora(cfg, TargetSet::Temporal, 4, 8);
    CHECK(sub.is_zero());
    auto [eps2, maps2] = model.denoise(x, p, 100, {&sub, &mot});
    CHECK(max_abs_diff(base_eps, eps2) == 0.0);

    // purity: identical inputs give bit-identical outputs and maps
    auto [eps3, maps3] = model.denoise(x, p, 100);
    CHECK(max_abs_diff(base_eps, eps3) == 0.0);
    for (size_t i = 0; i < base_maps.sca.size(); ++i)
        CHECK(max_abs_diff(base_maps.sca[i].second, maps3.sca[i].second) == 0.0);
}

TEST_CASE("attention rows sum to one and maps stay in [0,1]") {
    DenoiserConfig cfg = small_cfg();
    Denoiser model(cfg, 3);
    RandomStream rs(4);
    PromptEmbedding p = simple_prompt(cfg);
    for (int trial = 0; trial < 3; ++trial) {
        VideoTensor x{rs.normal_tensor({2, 4, 8, 8}), Space::Latent};
        auto [eps, maps] = model.denoise(x, p, 50 + trial * 300);
        CHECK(maps.sca.size() == 3);  // m0, b0, u0
        CHECK(maps.tsa.size() == 3);
        for (auto& [name, m] : maps.sca) {
            int64_t L = m.shape.back();
            int64_t rows = m.numel() / L;
            for (int64_t r = 0; r < rows; ++r) {
                double s = 0;
                for (int64_t j = 0; j < L; ++j) {
                    double v = m[r * L + j];
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                    s += v;
                }
                CHECK(std::fabs(s - 1.0) < 1e-5);
            }
        }
        for (auto& [name, m] : maps.tsa) {
            int64_t F = m.shape.back();
            int64_t rows = m.numel() / F;
            for (int64_t r = 0; r < rows; ++r) {
                double s = 0;
                for (int64_t j = 0; j < F; ++j) s += m[r * F + j];
                CHECK(std::fabs(s - 1.0) < 1e-5);
            }
        }
    }
}

TEST_CASE("timestep embedding properties") {
    DenoiserConfig cfg = small_cfg();
    Denoiser model(cfg, 5);
    Tensor e0 = model.timestep_embed(0);
    Tensor e0b = model.timestep_embed(0);
    CHECK(max_abs_diff(e0, e0b) == 0.0);
    Tensor eT = model.timestep_embed(cfg.max_t - 1);
    CHECK(axpy(e0, -1.0, eT).norm() > 0.0);
    double ref = e0.norm();
    for (int64_t t = 0; t < cfg.max_t; t += 97) {
        double n = model.timestep_embed(t).norm();
        CHECK(std::fabs(n - ref) / ref < 0.10);
    }
    CHECK_THROWS_AS(model.timestep_embed(-1), range_error);
}

TEST_CASE("spatial layers act per frame: permutation equivariance without temporal attention") {
    DenoiserConfig cfg = small_cfg();
    cfg.frames = 3;
    Denoiser model(cfg, 6);
    RandomStream rs(7);
    VideoTensor x{rs.normal_tensor({3, 4, 8, 8}), Space::Latent};
    PromptEmbedding p = simple_prompt(cfg);

    auto [eps, _] = model.denoise(x, p, 200, {}, /*temporal_enabled=*/false);

    // permute frames (2,0,1), run, un-permute: must match bit-exactly
    int64_t plane = 4 * 8 * 8;
    Tensor xp(x.data.shape);
    int perm[3] = {2, 0, 1};
    for (int f = 0; f < 3; ++f)
        for (int64_t i = 0; i < plane; ++i) xp[f * plane + i] = x.data[perm[f] * plane + i];
    auto [eps_p, __] = model.denoise({xp, Space::Latent}, p, 200, {}, false);
    for (int f = 0; f < 3; ++f)
        for (int64_t i = 0; i < plane; ++i)
            CHECK(eps_p[f * plane + i] == eps[perm[f] * plane + i]);
}

TEST_CASE("temporal attention is an exact no-op on single frames") {
    DenoiserConfig cfg = small_cfg();
    cfg.frames = 1;
    Denoiser model(cfg, 8);
    RandomStream rs(9);
    VideoTensor x{rs.normal_tensor({1, 4, 8, 8}), Space::Latent};
    PromptEmbedding p = simple_prompt(cfg);
    auto [with_t, m1] = model.denoise(x, p, 10, {}, true);
    auto [without_t, m2] = model.denoise(x, p, 10, {}, false);
    CHECK(max_abs_diff(with_t, without_t) == 0.0);

    // and a trained temporal adapter cannot move single-frame outputs either
    LoraDelta mot = new_lora(cfg, TargetSet::Temporal, 4, 10);
    for (auto& [name, l] : mot.layers)
        for (int64_t i = 0; i < l.up.numel(); ++i) l.up[i] = 0.3 * std::sin(double(i));
    auto [adapted, m3] = model.denoise(x, p, 10, {&mot}, true);
    CHECK(max_abs_diff(adapted, with_t) == 0.0);
}

TEST_CASE("gradient w.r.t. the input latent matches finite differences") {
    DenoiserConfig cfg = small_cfg();
    Denoiser model(cfg, 11);
    RandomStream rs(12);
    Tensor x0 = rs.normal_tensor({2, 4, 8, 8});
    PromptEmbedding p = simple_prompt(cfg);

    auto loss_of = [&](const Tensor& xin) {
        Tape tape;
        int x = tape.leaf(xin, false);
        DenoiseResult r = model.forward(tape, x, p, 123, {}, {});
        return tape.val(tape.sum_all(tape.mul(r.eps, r.eps)))[0];
    };
    Tape tape;
    int x = tape.leaf(x0, true);
    DenoiseResult r = model.forward(tape, x, p, 123, {}, {});
    int loss = tape.sum_all(tape.mul(r.eps, r.eps));
    tape.backward(loss);
    double err = fd_rel_error(loss_of, x0, tape.grad(x), 48, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("unknown adapter target layer raises a configuration error") {
    DenoiserConfig cfg = small_cfg();
    Denoiser model(cfg, 13);
    LoraDelta bogus = new_lora(cfg, TargetSet::Spatial, 2, 1);
    bogus.layers[0].first = "zz.sattn.q";
    RandomStream rs(14);
    VideoTensor x{rs.normal_tensor({2, 4, 8, 8}), Space::Latent};
    PromptEmbedding p = simple_prompt(cfg);
    CHECK_THROWS_AS(model.denoise(x, p, 1, {&bogus}), config_error);
}
