#include "vidfuse/synthworld.hpp"

#include <algorithm>
#include <cmath>

namespace vidfuse::synthworld {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

const std::vector<std::pair<std::string, std::array<double, 3>>>& palette() {
    static const std::vector<std::pair<std::string, std::array<double, 3>>> p = {
        {"red", {0.90, 0.10, 0.10}},    {"blue", {0.15, 0.20, 0.90}},
        {"yellow", {0.90, 0.85, 0.10}}, {"magenta", {0.85, 0.10, 0.80}},
        {"cyan", {0.10, 0.80, 0.85}},   {"orange", {0.95, 0.55, 0.10}},
        {"green", {0.10, 0.75, 0.15}},  {"purple", {0.50, 0.15, 0.85}},
        {"pink", {0.95, 0.55, 0.70}},   {"brown", {0.55, 0.35, 0.15}},
        {"white", {0.95, 0.95, 0.95}},  {"navy", {0.10, 0.10, 0.45}},
        {"lime", {0.60, 0.95, 0.30}},   {"teal", {0.10, 0.45, 0.45}},
    };
    return p;
}

std::string shape_word(Shape s) {
    switch (s) {
        case Shape::Circle: return "circle";
        case Shape::Square: return "square";
        case Shape::Triangle: return "triangle";
        case Shape::Star: return "star";
    }
    return "circle";
}

std::string color_word(const std::array<double, 3>& rgb) {
    double best = 1e9;
    std::string word;
    for (auto& [w, c] : palette()) {
        double d = 0;
        for (int i = 0; i < 3; ++i) d += (rgb[i] - c[i]) * (rgb[i] - c[i]);
        if (d < best) {
            best = d;
            word = w;
        }
    }
    return word;
}

std::array<double, 3> palette_color(const std::string& word) {
    for (auto& [w, c] : palette())
        if (w == word) return c;
    throw config_error("unknown palette color: " + word);
}

const std::vector<std::string>& background_words() {
    static const std::vector<std::string> b = {"gray", "dark", "light", "gradient"};
    return b;
}

std::array<double, 3> background_color(const std::string& word) {
    if (word == "gray") return {0.45, 0.45, 0.45};
    if (word == "dark") return {0.15, 0.15, 0.18};
    if (word == "light") return {0.80, 0.80, 0.78};
    if (word == "gradient") return {0.30, 0.32, 0.35};  // top; bottom fixed in apply
    throw config_error("unknown background: " + word);
}

void SceneSpec::validate() const {
    if (subjects.empty() || subjects.size() != trajectories.size())
        throw contract_violation("scene: subject count must equal trajectory count");
    if (frames < 1) throw contract_violation("scene: frames >= 1");
    for (size_t i = 0; i < subjects.size(); ++i) {
        double s = subjects[i].size;
        if (s < 1.5 || s > hw / 3.0) throw contract_violation("scene: subject size out of range");
        for (int64_t f = 0; f < frames; ++f) {
            auto [x, y] = trajectory_position(*this, i, f);
            if (x < s - 1 || x > hw - s || y < s - 1 || y > hw - s)
                throw contract_violation("scene: trajectory leaves frame bounds");
        }
    }
}

namespace {

double reflect(double v, double lo, double hi) {
    double span = hi - lo;
    double u = std::fmod(v - lo, 2 * span);
    if (u < 0) u += 2 * span;
    return lo + (u <= span ? u : 2 * span - u);
}

std::array<double, 2> linear_bounce(const Trajectory& tr, double margin, double hw, double f) {
    double nx = tr.dir_x, ny = tr.dir_y;
    double n = std::sqrt(nx * nx + ny * ny);
    if (n == 0) return {tr.cx, tr.cy};
    nx /= n;
    ny /= n;
    double x = tr.cx + nx * tr.speed * (f + tr.phase);
    double y = tr.cy + ny * tr.speed * (f + tr.phase);
    return {reflect(x, margin, hw - 1 - margin), reflect(y, margin, hw - 1 - margin)};
}

}  // namespace

std::array<double, 2> trajectory_position(const SceneSpec& spec, size_t idx, int64_t f) {
    const Trajectory& tr = spec.trajectories[idx];
    double margin = spec.subjects[idx].size + 0.5;
    double hw = static_cast<double>(spec.hw);
    double fd = static_cast<double>(f);
    switch (tr.cls) {
        case PathClass::Static:
            return {tr.cx, tr.cy};
        case PathClass::Bounce:
            return linear_bounce(tr, margin, hw, fd);
        case PathClass::Orbit: {
            double theta = tr.phase + tr.dir_x * 2.0 * kPi * tr.speed * fd /
                                          static_cast<double>(spec.frames);
            if (tr.role == 1) theta += kPi;
            return {tr.cx + tr.radius * std::cos(theta), tr.cy + tr.radius * std::sin(theta)};
        }
        case PathClass::Chase: {
            // role 0 leads along a reflected line; role 1 trails it by `lag` frames
            double eff = tr.role == 0 ? fd : std::max(0.0, fd - static_cast<double>(tr.lag));
            return linear_bounce(tr, margin, hw, eff);
        }
        case PathClass::Ride: {
            // role 1 is the mount on a horizontal line, role 0 rides on top
            Trajectory mount = tr;
            mount.dir_x = 1.0;
            mount.dir_y = 0.0;
            auto pos = linear_bounce(mount, margin, hw, fd);
            if (tr.role == 0) {
                double lift = spec.subjects[idx].size;
                for (const auto& s : spec.subjects) lift = std::max(lift, s.size);
                pos[1] -= spec.subjects[idx].size + lift * 0.9;
            }
            return pos;
        }
        case PathClass::Cross: {
            if (tr.role == 0) {
                double x = reflect(tr.cx + tr.speed * fd, margin, hw - 1 - margin);
                return {x, tr.cy};
            }
            double y = reflect(tr.cy + tr.speed * fd, margin, hw - 1 - margin);
            return {tr.cx + 3.0, y};
        }
    }
    return {tr.cx, tr.cy};
}

bool inside_shape(Shape shape, double dx, double dy, double s) {
    switch (shape) {
        case Shape::Circle:
            return dx * dx + dy * dy <= s * s;
        case Shape::Square:
            return std::max(std::fabs(dx), std::fabs(dy)) <= 0.88 * s;
        case Shape::Triangle: {
            if (dy < -s || dy > 0.85 * s) return false;
            double half = s * (dy + s) / (1.85 * s);
            return std::fabs(dx) <= half;
        }
        case Shape::Star: {
            double r = std::sqrt(dx * dx + dy * dy);
            if (r > s) return false;
            double theta = std::atan2(dy, dx);
            double rim = s * (0.48 + 0.52 * (0.5 + 0.5 * std::cos(5.0 * (theta - kPi / 2))));
            return r <= rim;
        }
    }
    return false;
}

std::string caption_of(const SceneSpec& spec) {
    auto phrase = [](const SubjectSpec& s) {
        return color_word(s.color) + " " + shape_word(s.shape);
    };
    std::string c;
    if (spec.static_caption) {
        c = "a static video of a " + phrase(spec.subjects[0]);
        if (spec.subjects.size() > 1) c += " and a " + phrase(spec.subjects[1]);
        c += " on " + spec.bg_word;
    } else if (spec.subjects.size() == 1) {
        c = "a " + phrase(spec.subjects[0]) + " " + spec.verb + " on " + spec.bg_word;
    } else {
        c = "a " + phrase(spec.subjects[0]) + " " + spec.verb + " a " + phrase(spec.subjects[1]) +
            " on " + spec.bg_word;
    }
    return c;
}

RenderResult render(const SceneSpec& spec, uint64_t seed) {
    spec.validate();
    int64_t F = spec.frames, H = spec.hw, W = spec.hw;
    RandomStream tex(derive_seed(seed, "texture"));

    RenderResult out;
    out.video = VideoTensor(Tensor({F, 3, H, W}), Space::Pixel);
    out.masks.assign(spec.subjects.size(), Tensor({F, H, W}));
    out.caption = caption_of(spec);
    Tensor& vid = out.video.data;

    for (int64_t f = 0; f < F; ++f) {
        // background
        for (int64_t y = 0; y < H; ++y) {
            std::array<double, 3> row = spec.bg;
            if (spec.gradient) {
                double t = static_cast<double>(y) / static_cast<double>(H - 1);
                for (int i = 0; i < 3; ++i) row[i] = spec.bg[i] + t * (spec.bg2[i] - spec.bg[i]);
            }
            for (int64_t x = 0; x < W; ++x)
                for (int64_t c = 0; c < 3; ++c)
                    vid[((f * 3 + c) * H + y) * W + x] = 2.0 * row[c] - 1.0;
        }
        // subjects in order; later subjects occlude earlier ones
        for (size_t si = 0; si < spec.subjects.size(); ++si) {
            const SubjectSpec& sub = spec.subjects[si];
            auto [cx, cy] = trajectory_position(spec, si, f);
            int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - sub.size - 1)));
            int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::ceil(cy + sub.size + 1)));
            int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - sub.size - 1)));
            int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::ceil(cx + sub.size + 1)));
            for (int64_t y = y0; y <= y1; ++y)
                for (int64_t x = x0; x <= x1; ++x) {
                    double dx = static_cast<double>(x) - cx;
                    double dy = static_cast<double>(y) - cy;
                    if (!inside_shape(sub.shape, dx, dy, sub.size)) continue;
                    std::array<double, 3> col = sub.color;
                    if (sub.texture == 1) {
                        double n = tex.uniform(-0.06, 0.06);
                        for (int i = 0; i < 3; ++i) col[i] += n;
                    } else if (sub.texture == 2) {
                        double r = std::sqrt(dx * dx + dy * dy);
                        double n = (static_cast<int64_t>(std::floor(r / 1.7)) % 2 == 0) ? 0.06 : -0.06;
                        for (int i = 0; i < 3; ++i) col[i] += n;
                    }
                    for (int64_t c = 0; c < 3; ++c)
                        vid[((f * 3 + c) * H + y) * W + x] =
                            std::clamp(2.0 * col[static_cast<size_t>(c)] - 1.0, -1.0, 1.0);
                    out.masks[si][(f * H + y) * W + x] = 1.0;
                    for (size_t sj = 0; sj < si; ++sj) out.masks[sj][(f * H + y) * W + x] = 0.0;
                }
        }
    }

    // invariant: every subject visible somewhere
    for (size_t si = 0; si < spec.subjects.size(); ++si)
        if (out.masks[si].sum() == 0.0)
            throw contract_violation("scene: subject " + std::to_string(si) + " has empty mask");
    return out;
}

VideoTensor to_latent(const VideoTensor& px) {
    if (px.space != Space::Pixel) throw contract_violation("to_latent: expects pixel space");
    int64_t F = px.frames(), C = px.channels(), H = px.height(), W = px.width();
    if (H % 2 != 0 || W % 2 != 0) throw contract_violation("to_latent: H, W must be even");
    int64_t h = H / 2, w = W / 2;
    Tensor out({F, C * 4, h, w});
    const Tensor& in = px.data;
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    double a = in[((f * C + c) * H + 2 * y) * W + 2 * x];
                    double b = in[((f * C + c) * H + 2 * y) * W + 2 * x + 1];
                    double cc = in[((f * C + c) * H + 2 * y + 1) * W + 2 * x];
                    double d = in[((f * C + c) * H + 2 * y + 1) * W + 2 * x + 1];
                    double* o = out.v.data() + (((f * C * 4) + c * 4) * h + y) * w + x;
                    int64_t plane = h * w;
                    o[0 * plane] = 0.5 * (a + b + cc + d);
                    o[1 * plane] = 0.5 * (a - b + cc - d);
                    o[2 * plane] = 0.5 * (a + b - cc - d);
                    o[3 * plane] = 0.5 * (a - b - cc + d);
                }
    return {std::move(out), Space::Latent};
}

VideoTensor from_latent(const VideoTensor& lat) {
    if (lat.space != Space::Latent) throw contract_violation("from_latent: expects latent space");
    int64_t F = lat.frames(), C4 = lat.channels(), h = lat.height(), w = lat.width();
    if (C4 % 4 != 0) throw contract_violation("from_latent: channels must be divisible by 4");
    int64_t C = C4 / 4, H = 2 * h, W = 2 * w;
    Tensor out({F, C, H, W});
    const Tensor& in = lat.data;
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    int64_t plane = h * w;
                    const double* i = in.v.data() + (((f * C4) + c * 4) * h + y) * w + x;
                    double ll = i[0 * plane], lh = i[1 * plane], hl = i[2 * plane],
                           hh = i[3 * plane];
                    out[((f * C + c) * H + 2 * y) * W + 2 * x] = 0.5 * (ll + lh + hl + hh);
                    out[((f * C + c) * H + 2 * y) * W + 2 * x + 1] = 0.5 * (ll - lh + hl - hh);
                    out[((f * C + c) * H + 2 * y + 1) * W + 2 * x] = 0.5 * (ll + lh - hl - hh);
                    out[((f * C + c) * H + 2 * y + 1) * W + 2 * x + 1] =
                        0.5 * (ll - lh - hl + hh);
                }
    return {std::move(out), Space::Pixel};
}

namespace {

SubjectSpec make_subject(Shape sh, const std::string& color, int texture, double size) {
    SubjectSpec s;
    s.shape = sh;
    s.color = palette_color(color);
    s.texture = texture;
    s.size = size;
    return s;
}

void apply_background(SceneSpec& sc, const std::string& word) {
    sc.bg_word = word;
    sc.bg = background_color(word);
    sc.bg2 = sc.bg;
    sc.gradient = word == "gradient";
    if (sc.gradient) sc.bg2 = {0.62, 0.60, 0.66};
}

SceneSpec pair_scene(const SubjectSpec& a, const SubjectSpec& b, PathClass cls,
                     const std::string& verb, const std::string& bg) {
    SceneSpec sc;
    sc.subjects = {a, b};
    Trajectory t0, t1;
    t0.cls = t1.cls = cls;
    t0.role = 0;
    t1.role = 1;
    sc.trajectories = {t0, t1};
    sc.verb = verb;
    apply_background(sc, bg);
    return sc;
}

}  // namespace

Benchmark make_benchmark(uint64_t seed, int aux_count) {
    Benchmark bm;
    RandomStream rs(derive_seed(seed, "benchmark"));

    // --- subjects: three pairs, distinct (shape,color) combinations
    struct Def { Shape sh; const char* color; int tex; double size; };
    const Def subject_defs[6] = {
        {Shape::Circle, "red", 0, 5.0},    {Shape::Square, "blue", 0, 4.6},
        {Shape::Triangle, "yellow", 0, 5.4}, {Shape::Star, "magenta", 0, 5.6},
        {Shape::Square, "cyan", 2, 4.6},   {Shape::Circle, "orange", 2, 4.8},
    };
    for (int i = 0; i < 6; ++i) {
        BenchSubject bs;
        bs.spec = make_subject(subject_defs[i].sh, subject_defs[i].color, subject_defs[i].tex,
                               subject_defs[i].size);
        bs.id = std::string(subject_defs[i].color) + "_" + shape_word(subject_defs[i].sh);
        // 4 reference stills at varied positions and backgrounds
        for (int k = 0; k < 4; ++k) {
            SceneSpec sc;
            sc.subjects = {bs.spec};
            Trajectory t;
            t.cls = PathClass::Static;
            t.cx = rs.uniform(9.0, 23.0);
            t.cy = rs.uniform(9.0, 23.0);
            sc.trajectories = {t};
            sc.frames = 1;
            sc.static_caption = true;
            apply_background(sc, background_words()[static_cast<size_t>(k % 3)]);
            bs.stills.push_back(render(sc, derive_seed(seed, bs.id + ":still" +
                                                                 std::to_string(k))));
        }
        bm.subjects.push_back(std::move(bs));
    }
    bm.pairs = {{0, 1}, {2, 3}, {4, 5}};

    // --- motions: interactive path classes only (aux keeps bounce/static)
    struct MDef {
        const char* id;
        PathClass cls;
        const char* verb;
        Def p0, p1;
    };
    const MDef motion_defs[6] = {
        {"orbit_cw", PathClass::Orbit, "orbits",
         {Shape::Triangle, "green", 0, 4.6}, {Shape::Star, "purple", 0, 5.0}},
        {"orbit_ccw", PathClass::Orbit, "orbits",
         {Shape::Circle, "purple", 0, 4.4}, {Shape::Square, "green", 0, 4.4}},
        {"chase_h", PathClass::Chase, "chases",
         {Shape::Circle, "pink", 0, 4.6}, {Shape::Square, "brown", 0, 4.6}},
        {"chase_d", PathClass::Chase, "chases",
         {Shape::Triangle, "brown", 0, 5.0}, {Shape::Star, "pink", 0, 5.2}},
        {"ride", PathClass::Ride, "rides",
         {Shape::Circle, "green", 0, 3.8}, {Shape::Square, "brown", 0, 5.2}},
        {"cross", PathClass::Cross, "crosses",
         {Shape::Triangle, "purple", 0, 4.8}, {Shape::Square, "pink", 0, 4.6}},
    };
    for (int m = 0; m < 6; ++m) {
        const MDef& d = motion_defs[m];
        SubjectSpec a = make_subject(d.p0.sh, d.p0.color, d.p0.tex, d.p0.size);
        SubjectSpec b = make_subject(d.p1.sh, d.p1.color, d.p1.tex, d.p1.size);
        SceneSpec sc = pair_scene(a, b, d.cls, d.verb, "gray");
        Trajectory& t0 = sc.trajectories[0];
        Trajectory& t1 = sc.trajectories[1];
        switch (d.cls) {
            case PathClass::Orbit:
                t0.radius = t1.radius = 7.5;
                t0.speed = t1.speed = (m == 0) ? 0.75 : 1.0;
                t0.dir_x = t1.dir_x = (m == 0) ? 1.0 : -1.0;
                t0.phase = t1.phase = (m == 0) ? 0.0 : kPi / 2;
                break;
            case PathClass::Chase:
                t0.cx = t1.cx = 8.0;
                t0.cy = t1.cy = (m == 2) ? 16.0 : 10.0;
                t0.dir_x = t1.dir_x = 1.0;
                t0.dir_y = t1.dir_y = (m == 2) ? 0.0 : 0.55;
                t0.speed = t1.speed = 2.3;
                t0.lag = t1.lag = 2;
                break;
            case PathClass::Ride:
                t0.cx = t1.cx = 9.0;
                t0.cy = t1.cy = 20.0;
                t0.speed = t1.speed = 2.1;
                break;
            case PathClass::Cross:
                t0.cx = 6.0;
                t0.cy = 14.0;
                t0.speed = 2.6;
                t1.cx = 16.0;
                t1.cy = 6.0;
                t1.speed = 2.6;
                break;
            default:
                break;
        }
        BenchMotion bmn;
        bmn.id = d.id;
        bmn.scene = sc;
        bmn.reference = render(sc, derive_seed(seed, std::string("motion:") + d.id));
        bmn.motion_prompt = "a " + shape_word(a.shape) + " " + d.verb + " a " +
                            shape_word(b.shape);
        bm.motions.push_back(std::move(bmn));
    }

    for (int m = 0; m < 6; ++m)
        for (int p = 0; p < 3; ++p)
            for (const std::string& bg : background_words()) bm.combos.push_back({m, p, bg});

    // --- aux pool: bounce/static paths, colors disjoint from all benchmark
    // appearances ("white", "navy", "lime", "teal")
    const std::vector<std::string> aux_colors = {"white", "navy", "lime", "teal"};
    const Shape shapes[4] = {Shape::Circle, Shape::Square, Shape::Triangle, Shape::Star};
    RandomStream ar(derive_seed(seed, "aux"));
    for (int i = 0; i < aux_count; ++i) {
        int kind = static_cast<int>(ar.uniform_int(0, 9));  // 0-4 solo bounce, 5-6 solo static, 7-9 pair static
        std::string bg = background_words()[static_cast<size_t>(ar.uniform_int(0, 3))];
        auto rand_subject = [&]() {
            return make_subject(shapes[ar.uniform_int(0, 3)],
                                aux_colors[static_cast<size_t>(ar.uniform_int(0, 3))],
                                static_cast<int>(ar.uniform_int(0, 2)), ar.uniform(3.6, 5.6));
        };
        SceneSpec sc;
        if (kind <= 6) {
            SubjectSpec s = rand_subject();
            sc.subjects = {s};
            Trajectory t;
            if (kind <= 4) {
                t.cls = PathClass::Bounce;
                t.cx = ar.uniform(8.0, 24.0);
                t.cy = ar.uniform(8.0, 24.0);
                double ang = ar.uniform(0.0, 2 * kPi);
                t.dir_x = std::cos(ang);
                t.dir_y = std::sin(ang);
                t.speed = ar.uniform(1.2, 2.8);
                sc.verb = "bounces";
            } else {
                t.cls = PathClass::Static;
                t.cx = ar.uniform(9.0, 23.0);
                t.cy = ar.uniform(9.0, 23.0);
                sc.static_caption = true;
            }
            sc.trajectories = {t};
        } else {
            SubjectSpec a = rand_subject(), b = rand_subject();
            sc.subjects = {a, b};
            Trajectory t0, t1;
            t0.cls = t1.cls = PathClass::Static;
            t0.cx = ar.uniform(8.0, 13.5);
            t0.cy = ar.uniform(9.0, 23.0);
            t1.cx = ar.uniform(19.5, 24.0);
            t1.cy = ar.uniform(9.0, 23.0);
            sc.trajectories = {t0, t1};
            sc.static_caption = true;
        }
        apply_background(sc, bg);
        AuxClip ac;
        ac.scene = sc;
        ac.clip = render(sc, derive_seed(seed, "aux:" + std::to_string(i)));
        bm.aux.push_back(std::move(ac));
    }
    return bm;
}

}  // namespace vidfuse::synthworld
