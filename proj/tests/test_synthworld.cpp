#include <doctest.h>

#include <cmath>
#include <set>

#include "vidfuse/synthworld.hpp"

using namespace vidfuse;
using namespace vidfuse::synthworld;

namespace {
SceneSpec solo_scene(PathClass cls, double speed = 2.0) {
    SceneSpec sc;
    SubjectSpec s;
    s.shape = Shape::Circle;
    s.color = palette_color("red");
    s.size = 5.0;
    sc.subjects = {s};
    Trajectory t;
    t.cls = cls;
    t.speed = speed;
    t.dir_x = 1.0;
    t.dir_y = 0.4;
    sc.trajectories = {t};
    sc.verb = "bounces";
    return sc;
}
}  // namespace

TEST_CASE("static trajectory renders identical frames") {
    SceneSpec sc = solo_scene(PathClass::Static);
    RenderResult r = render(sc, 1);
    int64_t plane = 3 * 32 * 32;
    for (int64_t f = 1; f < sc.frames; ++f)
        for (int64_t i = 0; i < plane; ++i)
            CHECK(r.video.data[f * plane + i] == r.video.data[i]);
}

TEST_CASE("masks exactly cover rendered subject pixels") {
    SceneSpec sc = solo_scene(PathClass::Bounce);
    RenderResult r = render(sc, 2);
    // a pixel differs from background iff its mask bit is set (IoU == 1)
    int64_t H = 32, W = 32;
    for (int64_t f = 0; f < sc.frames; ++f)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double bgv = 2.0 * 0.45 - 1.0;
                bool differs = false;
                for (int64_t c = 0; c < 3; ++c)
                    differs |= std::fabs(r.video.data[((f * 3 + c) * H + y) * W + x] - bgv) > 1e-9;
                bool masked = r.masks[0][(f * H + y) * W + x] > 0.5;
                CHECK(differs == masked);
            }
}

TEST_CASE("same spec, different seeds differ only in texture pixels") {
    SceneSpec sc = solo_scene(PathClass::Bounce);
    sc.subjects[0].texture = 1;  // speckle
    RenderResult a = render(sc, 10);
    RenderResult b = render(sc, 20);
    // identical geometry
    for (size_t i = 0; i < a.masks[0].v.size(); ++i) CHECK(a.masks[0].v[i] == b.masks[0].v[i]);
    // differences confined to masked pixels
    int64_t H = 32, W = 32;
    bool any_diff = false;
    for (int64_t f = 0; f < sc.frames; ++f)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                bool masked = a.masks[0][(f * H + y) * W + x] > 0.5;
                for (int64_t c = 0; c < 3; ++c) {
                    double d = std::fabs(a.video.data[((f * 3 + c) * H + y) * W + x] -
                                         b.video.data[((f * 3 + c) * H + y) * W + x]);
                    if (d > 0) {
                        any_diff = true;
                        CHECK(masked);
                    }
                }
            }
    CHECK(any_diff);
}

TEST_CASE("caption is a pure function of the spec") {
    SceneSpec sc = solo_scene(PathClass::Bounce);
    CHECK(render(sc, 1).caption == "a red circle bounces on gray");
    CHECK(caption_of(sc) == render(sc, 99).caption);
}

TEST_CASE("latent map round-trips exactly and preserves energy") {
    SceneSpec sc = solo_scene(PathClass::Bounce);
    sc.subjects[0].texture = 1;
    RenderResult r = render(sc, 3);
    VideoTensor lat = to_latent(r.video);
    CHECK(lat.channels() == 12);
    CHECK(lat.height() == 16);
    VideoTensor back = from_latent(lat);
    CHECK(max_abs_diff(back.data, r.video.data) < 1e-6);
    CHECK(std::fabs(lat.data.sq_norm() - r.video.data.sq_norm()) <
          1e-6 * r.video.data.sq_norm());

    VideoTensor zero(Tensor({2, 3, 8, 8}), Space::Pixel);
    CHECK(to_latent(zero).data.max_abs() == 0.0);
    CHECK_THROWS_AS(to_latent(lat), contract_violation);
}

TEST_CASE("appearance and motion factorize") {
    // swapping subject appearances with identical trajectories leaves the
    // mask sequences unchanged
    Benchmark bm = make_benchmark(7, 4);
    SceneSpec sc = bm.motions[0].scene;
    RenderResult a = render(sc, 5);
    std::swap(sc.subjects[0].color, sc.subjects[1].color);
    std::swap(sc.subjects[0].texture, sc.subjects[1].texture);
    RenderResult b = render(sc, 5);
    for (size_t m = 0; m < a.masks.size(); ++m)
        for (size_t i = 0; i < a.masks[m].v.size(); ++i)
            CHECK(a.masks[m].v[i] == b.masks[m].v[i]);
}

TEST_CASE("benchmark bundle shape") {
    Benchmark bm = make_benchmark(11, 16);
    CHECK(bm.combos.size() == 72);
    CHECK(bm.motions.size() == 6);
    CHECK(bm.pairs.size() == 3);
    for (const auto& s : bm.subjects) {
        CHECK(s.stills.size() >= 3);
        CHECK(s.stills.size() <= 5);
        for (const auto& st : s.stills) CHECK(st.video.frames() == 1);
    }
    // aux pool disjoint: no shared (shape,color) pair, no shared path class
    std::set<std::pair<int, std::string>> bench_apps;
    for (const auto& s : bm.subjects)
        bench_apps.insert({static_cast<int>(s.spec.shape), color_word(s.spec.color)});
    for (const auto& m : bm.motions)
        for (const auto& p : m.scene.subjects)
            bench_apps.insert({static_cast<int>(p.shape), color_word(p.color)});
    std::set<PathClass> bench_paths;
    for (const auto& m : bm.motions)
        for (const auto& t : m.scene.trajectories) bench_paths.insert(t.cls);
    for (const auto& a : bm.aux) {
        for (const auto& p : a.scene.subjects)
            CHECK(bench_apps.count({static_cast<int>(p.shape), color_word(p.color)}) == 0);
        for (const auto& t : a.scene.trajectories) CHECK(bench_paths.count(t.cls) == 0);
    }
    // every motion's reference video renders with nonempty masks per subject
    for (const auto& m : bm.motions)
        for (const auto& mask : m.reference.masks) CHECK(mask.sum() > 0.0);
}
