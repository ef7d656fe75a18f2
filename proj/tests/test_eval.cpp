#include <doctest.h>

#include "vidfuse/eval.hpp"

using namespace vidfuse;
using namespace vidfuse::synthworld;

namespace {

SceneSpec moving_scene(const char* color, Shape sh, PathClass cls, double speed = 2.0) {
    SceneSpec sc;
    SubjectSpec s;
    s.shape = sh;
    s.color = palette_color(color);
    s.size = 5.0;
    sc.subjects = {s};
    Trajectory t;
    t.cls = cls;
    t.speed = speed;
    t.cx = 6.0;
    t.cy = 12.0;
    t.dir_x = 1.0;
    t.dir_y = 0.3;
    sc.trajectories = {t};
    sc.verb = "bounces";
    return sc;
}

std::vector<std::array<double, 2>> path_of(const SceneSpec& sc, size_t idx) {
    std::vector<std::array<double, 2>> out;
    for (int64_t f = 0; f < sc.frames; ++f) out.push_back(trajectory_position(sc, idx, f));
    return out;
}

}  // namespace

TEST_CASE("identity_score: self-match, wrong color, empty video") {
    SceneSpec sc = moving_scene("red", Shape::Circle, PathClass::Bounce);
    auto r = render(sc, 1);
    eval::IdentityResult self = eval::identity_score(r.video, sc.subjects[0]);
    CHECK(self.detected);
    CHECK(self.score >= 0.95);

    SubjectSpec other = sc.subjects[0];
    other.color = palette_color("blue");
    eval::IdentityResult wrong = eval::identity_score(r.video, other);
    CHECK(wrong.score < self.score);

    VideoTensor empty(Tensor(std::vector<int64_t>{2, 3, 32, 32}, -1.0), Space::Pixel);
    eval::IdentityResult none = eval::identity_score(empty, sc.subjects[0]);
    CHECK(none.score == 0.0);
    CHECK(!none.detected);

    // background invariance: same subject on another background
    SceneSpec sc2 = sc;
    sc2.bg = {0.15, 0.15, 0.18};
    sc2.bg_word = "dark";
    auto r2 = render(sc2, 1);
    eval::IdentityResult self2 = eval::identity_score(r2.video, sc.subjects[0]);
    CHECK(std::fabs(self2.score - self.score) < 0.02);

    // every shape's self-match stays high
    for (Shape sh : {Shape::Square, Shape::Triangle, Shape::Star}) {
        SceneSpec s3 = moving_scene("yellow", sh, PathClass::Static);
        auto r3 = render(s3, 2);
        CHECK(eval::identity_score(r3.video, s3.subjects[0]).score >= 0.95);
    }
}

TEST_CASE("motion_score: self, static, reversed") {
    SceneSpec sc = moving_scene("red", Shape::Circle, PathClass::Bounce, 2.4);
    auto r = render(sc, 3);
    auto ref = path_of(sc, 0);
    double self = eval::motion_score(r.video, sc.subjects[0], ref);
    CHECK(self >= 0.95);

    // static video against a moving reference ~ 0
    SceneSpec st = moving_scene("red", Shape::Circle, PathClass::Static);
    auto rs = render(st, 4);
    CHECK(std::fabs(eval::motion_score(rs.video, st.subjects[0], ref)) <= 0.1);

    // time-reversed rendering scores negative
    VideoTensor rev(Tensor(r.video.data.shape), Space::Pixel);
    int64_t plane = 3 * 32 * 32;
    for (int64_t f = 0; f < sc.frames; ++f)
        for (int64_t i = 0; i < plane; ++i)
            rev.data[f * plane + i] = r.video.data[(sc.frames - 1 - f) * plane + i];
    CHECK(eval::motion_score(rev, sc.subjects[0], ref) < 0.0);
}

TEST_CASE("temporal_consistency: identical, noise, single frame") {
    Tensor same({4, 3, 32, 32});
    RandomStream rs(5);
    Tensor one_frame = rs.uniform_tensor({3 * 32 * 32}, -1.0, 1.0);
    for (int64_t f = 0; f < 4; ++f)
        for (int64_t i = 0; i < one_frame.numel(); ++i) same[f * one_frame.numel() + i] = one_frame[i];
    CHECK(eval::temporal_consistency({same, Space::Pixel}) == doctest::Approx(1.0));

    Tensor noise = rs.uniform_tensor({6, 3, 32, 32}, -1.0, 1.0);
    CHECK(std::fabs(eval::temporal_consistency({noise, Space::Pixel})) <= 0.1);

    Tensor single = rs.uniform_tensor({1, 3, 32, 32}, -1.0, 1.0);
    CHECK(eval::temporal_consistency({single, Space::Pixel}) == 1.0);
}

TEST_CASE("leakage_score: pure target, pure reference, constructed mixture") {
    SubjectSpec ref_s, tgt_s;
    ref_s.color = palette_color("green");
    tgt_s.color = palette_color("red");

    SceneSpec tgt_scene = moving_scene("red", Shape::Circle, PathClass::Static);
    auto tgt_render = render(tgt_scene, 6);
    CHECK(eval::leakage_score(tgt_render.video, {ref_s}, {tgt_s}) == doctest::Approx(0.0));

    SceneSpec ref_scene = moving_scene("green", Shape::Circle, PathClass::Static);
    auto ref_render = render(ref_scene, 7);
    CHECK(eval::leakage_score(ref_render.video, {ref_s}, {tgt_s}) == doctest::Approx(1.0));

    // constructed 50/50 pixel mixture
    Tensor mix(std::vector<int64_t>{1, 3, 32, 32}, -1.0);
    auto put = [&](int64_t y, int64_t x, const std::array<double, 3>& c) {
        for (int64_t ch = 0; ch < 3; ++ch)
            mix[(ch * 32 + y) * 32 + x] = 2.0 * c[static_cast<size_t>(ch)] - 1.0;
    };
    for (int64_t k = 0; k < 100; ++k) put(k / 10, k % 10, ref_s.color);
    for (int64_t k = 0; k < 100; ++k) put(20 + k / 10, k % 10, tgt_s.color);
    double half = eval::leakage_score({mix, Space::Pixel}, {ref_s}, {tgt_s});
    CHECK(std::fabs(half - 0.5) < 0.05);
}

TEST_CASE("attribute_mixing: clean, half-swapped, single subject") {
    SubjectSpec a, b;
    a.color = palette_color("red");
    b.color = palette_color("blue");

    // clean rendering: two pure blobs
    Tensor clean(std::vector<int64_t>{1, 3, 32, 32}, -1.0);
    auto put = [](Tensor& img, int64_t y, int64_t x, const std::array<double, 3>& c) {
        for (int64_t ch = 0; ch < 3; ++ch)
            img[(ch * 32 + y) * 32 + x] = 2.0 * c[static_cast<size_t>(ch)] - 1.0;
    };
    for (int64_t y = 4; y < 10; ++y)
        for (int64_t x = 4; x < 10; ++x) put(clean, y, x, a.color);
    for (int64_t y = 20; y < 26; ++y)
        for (int64_t x = 20; x < 26; ++x) put(clean, y, x, b.color);
    double clean_mix = eval::attribute_mixing({clean, Space::Pixel}, {a, b});
    CHECK(clean_mix == doctest::Approx(0.0));

    // half-swapped colors inside each blob
    Tensor swapped = clean;
    for (int64_t y = 4; y < 10; ++y)
        for (int64_t x = 7; x < 10; ++x) put(swapped, y, x, b.color);
    for (int64_t y = 20; y < 26; ++y)
        for (int64_t x = 23; x < 26; ++x) put(swapped, y, x, a.color);
    double mixed = eval::attribute_mixing({swapped, Space::Pixel}, {a, b});
    CHECK(mixed > clean_mix);
    CHECK(mixed == doctest::Approx(0.5).epsilon(0.1));

    // single subject -> 0 by convention
    CHECK(eval::attribute_mixing({clean, Space::Pixel}, {a}) == 0.0);
}
