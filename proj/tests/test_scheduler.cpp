#include <doctest.h>

#include <cmath>

#include "vidfuse/rng.hpp"
#include "vidfuse/scheduler.hpp"

using namespace vidfuse;

namespace {
VideoTensor vid(Tensor t) { return {std::move(t), Space::Latent}; }
}

TEST_CASE("schedule endpoints and monotonicity") {
    NoiseSchedule s = NoiseSchedule::linear_beta();
    CHECK(s.num_steps == 1000);
    CHECK(s.alpha_bar.front() >= 0.99);
    CHECK(s.alpha_bar.back() <= 0.01);
    for (size_t t = 1; t < s.alpha_bar.size(); ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);

    auto ts = s.inference_steps(50);
    CHECK(ts.size() == 50);
    CHECK(ts.front() == 999);
    for (size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
}

TEST_CASE("add_noise formula cases") {
    // schedule pinned at alpha_bar ~ 1 at t=0 gives back x essentially unchanged;
    // exact identity checked against the formula with a == 1
    NoiseSchedule s = NoiseSchedule::linear_beta();
    RandomStream rs(11);
    Tensor x(std::vector<int64_t>{2, 1, 2, 2}, 1.0);
    Tensor z(std::vector<int64_t>{2, 1, 2, 2}, 0.0);

    // alpha_bar = 0.25 -> all entries 0.5 for x = ones, eps = zeros
    NoiseSchedule flat = s;
    int64_t tq = 0;
    while (flat.alpha_bar[static_cast<size_t>(tq)] > 0.25) ++tq;
    flat.alpha_bar[static_cast<size_t>(tq)] = 0.25;
    VideoTensor out = add_noise(vid(x), vid(z), tq, flat);
    for (int64_t i = 0; i < out.data.numel(); ++i)
        CHECK(out.data[i] == doctest::Approx(0.5).epsilon(1e-12));

    // identity case: alpha_bar pinned at ~1 (use the exact formula with eps=0)
    VideoTensor idc = add_noise(vid(x), vid(z), 0, s);
    for (int64_t i = 0; i < idc.data.numel(); ++i)
        CHECK(idc.data[i] == doctest::Approx(std::sqrt(s.ab(0))).epsilon(1e-12));

    // Monte-Carlo oracle: unit-variance x and eps keep unit variance at any t
    Tensor gx = rs.normal_tensor({8, 4, 16, 16});
    Tensor ge = rs.normal_tensor({8, 4, 16, 16});
    for (int64_t t : {100, 500, 900}) {
        VideoTensor o = add_noise(vid(gx), vid(ge), t, s);
        double var = o.data.sq_norm() / static_cast<double>(o.data.numel());
        CHECK(std::fabs(var - 1.0) < 0.05);
    }

    // errors
    CHECK_THROWS_AS(add_noise(vid(x), vid(Tensor({1, 1, 2, 2})), 0, s), contract_violation);
    CHECK_THROWS_AS(add_noise(vid(x), vid(z), 1000, s), range_error);

    // linearity in both arguments
    Tensor x2 = rs.normal_tensor({1, 1, 4, 4});
    Tensor e2 = rs.normal_tensor({1, 1, 4, 4});
    VideoTensor both = add_noise(vid(x2), vid(e2), 300, s);
    VideoTensor onlyx = add_noise(vid(x2), vid(Tensor({1, 1, 4, 4})), 300, s);
    VideoTensor onlye = add_noise(vid(Tensor({1, 1, 4, 4})), vid(e2), 300, s);
    CHECK(max_abs_diff(both.data, axpy(onlyx.data, 1.0, onlye.data)) < 1e-12);
}

TEST_CASE("cfg_combine formula cases") {
    Tensor c(std::vector<int64_t>{1, 1, 2, 2}, 1.0);
    Tensor u(std::vector<int64_t>{1, 1, 2, 2}, 0.0);
    VideoTensor s1 = cfg_combine(vid(c), vid(u), 1.0);
    CHECK(max_abs_diff(s1.data, c) == 0.0);
    VideoTensor s0 = cfg_combine(vid(c), vid(u), 0.0);
    CHECK(max_abs_diff(s0.data, u) == 0.0);
    VideoTensor s9 = cfg_combine(vid(c), vid(u), 9.0);
    for (int64_t i = 0; i < s9.data.numel(); ++i) CHECK(s9.data[i] == 9.0);
    // cfg_combine(a, a, s) == a for all s
    RandomStream rs(3);
    Tensor a = rs.normal_tensor({1, 1, 3, 3});
    for (double sc : {0.0, 0.5, 9.0, -2.0})
        CHECK(max_abs_diff(cfg_combine(vid(a), vid(a), sc).data, a) == 0.0);
}

TEST_CASE("ddim_step no-op and perfect-denoise cases") {
    NoiseSchedule s = NoiseSchedule::linear_beta();
    RandomStream rs(5);
    Tensor x0 = rs.normal_tensor({1, 1, 4, 4});
    Tensor eps = rs.normal_tensor({1, 1, 4, 4});
    int64_t t = 700;
    VideoTensor xt = add_noise(vid(x0), vid(eps), t, s);

    // stepping with the true eps to the clean endpoint recovers x0
    VideoTensor rec = ddim_step(xt, vid(eps), t, -1, s);
    CHECK(max_abs_diff(rec.data, x0) < 1e-10);

    // equal alpha levels leave x unchanged (exercised via the formula: step
    // t -> t_prev and invert back with the same eps)
    VideoTensor down = ddim_step(xt, vid(eps), t, 400, s);
    VideoTensor back = add_noise(ddim_step(down, vid(eps), 400, -1, s), vid(eps), t, s);
    CHECK(max_abs_diff(back.data, xt.data) < 1e-10);

    CHECK_THROWS_AS(ddim_step(xt, vid(eps), 400, 700, s), range_error);
}

TEST_CASE("ddim invert/sample round-trip with a fixed smooth denoiser") {
    NoiseSchedule s = NoiseSchedule::linear_beta();
    RandomStream rs(7);
    // smooth nonlinear denoiser with moderate Lipschitz constant
    Tensor w = rs.normal_tensor({16, 16}, 0.2);
    DenoiseFn den = [&](const Tensor& x, int64_t t) {
        Tensor out(x.shape);
        double tv = static_cast<double>(t) / 1000.0;
        for (int64_t i = 0; i < x.numel(); ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < 16; ++j)
                acc += w[(i % 16) * 16 + j] * std::tanh(x[(i / 16) * 16 + j % 16]);
            out[i] = std::tanh(x[i]) * 0.5 + 0.3 * acc + 0.1 * tv;
        }
        return out;
    };

    Tensor x0 = rs.normal_tensor({1, 1, 4, 4}, 0.5);
    VideoTensor inv = ddim_invert(vid(x0), den, s, 20, 8);
    VideoTensor rec = ddim_sample(inv, den, s, 20);
    CHECK(max_abs_diff(rec.data, x0) < 1e-3);

    // identity denoiser predicting zero noise: inversion just rescales by
    // sqrt(alpha_bar_T) ~ 0
    DenoiseFn zero = [](const Tensor& x, int64_t) { return Tensor(x.shape); };
    VideoTensor inv0 = ddim_invert(vid(x0), zero, s, 20);
    CHECK(inv0.data.max_abs() < 1e-2);
    CHECK(inv0.data.max_abs() == doctest::Approx(std::sqrt(s.ab(999)) * x0.max_abs()));

    // injectivity smoke check: different videos yield different latents
    Tensor y0 = rs.normal_tensor({1, 1, 4, 4}, 0.5);
    VideoTensor invy = ddim_invert(vid(y0), den, s, 20, 8);
    CHECK(max_abs_diff(invy.data, inv.data) > 0.0);
}
