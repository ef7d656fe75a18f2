#include "vidfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <sstream>

#include "vidfuse/bundle.hpp"
#include "vidfuse/png_io.hpp"

namespace vidfuse::eval {

namespace {

inline double px(const Tensor& v, int64_t f, int64_t c, int64_t y, int64_t x, int64_t C,
                 int64_t H, int64_t W) {
    return 0.5 * (v[((f * C + c) * H + y) * W + x] + 1.0);  // [-1,1] -> [0,1]
}

double color_dist(const Tensor& v, int64_t f, int64_t y, int64_t x, int64_t C, int64_t H,
                  int64_t W, const std::array<double, 3>& col) {
    double s = 0;
    for (int64_t c = 0; c < 3; ++c) {
        double d = px(v, f, std::min(c, C - 1), y, x, C, H, W) - col[static_cast<size_t>(c)];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

IdentityResult identity_score(const VideoTensor& pixel, const synthworld::SubjectSpec& spec,
                              const DetectConfig& dc) {
    if (pixel.space != Space::Pixel) throw contract_violation("identity_score: pixel video");
    int64_t F = pixel.frames(), C = pixel.channels(), H = pixel.height(), W = pixel.width();
    const Tensor& v = pixel.data;
    IdentityResult res;
    double acc = 0;
    for (int64_t f = 0; f < F; ++f) {
        std::vector<std::pair<int64_t, int64_t>> det;
        double dist_sum = 0;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double d = color_dist(v, f, y, x, C, H, W, spec.color);
                if (d < dc.color_thresh) {
                    det.emplace_back(y, x);
                    dist_sum += d;
                }
            }
        if (static_cast<int64_t>(det.size()) < dc.min_pixels) continue;
        res.detected = true;
        double color_score = 1.0 - (dist_sum / static_cast<double>(det.size())) / dc.color_thresh;

        double cy = 0, cx = 0;
        for (auto& [y, x] : det) {
            cy += static_cast<double>(y);
            cx += static_cast<double>(x);
        }
        cy /= static_cast<double>(det.size());
        cx /= static_cast<double>(det.size());

        // best template IoU over a small sub-pixel offset grid
        double best_iou = 0;
        for (double oy = -1.0; oy <= 1.0; oy += 0.5)
            for (double ox = -1.0; ox <= 1.0; ox += 0.5) {
                int64_t inter = 0, uni = 0;
                int64_t r = static_cast<int64_t>(spec.size) + 2;
                int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(cy) - r - 1);
                int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(cy) + r + 1);
                int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(cx) - r - 1);
                int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(cx) + r + 1);
                std::vector<std::vector<bool>> dmask(static_cast<size_t>(y1 - y0 + 1),
                                                     std::vector<bool>(static_cast<size_t>(x1 - x0 + 1), false));
                for (auto& [y, x] : det)
                    if (y >= y0 && y <= y1 && x >= x0 && x <= x1)
                        dmask[static_cast<size_t>(y - y0)][static_cast<size_t>(x - x0)] = true;
                for (int64_t y = y0; y <= y1; ++y)
                    for (int64_t x = x0; x <= x1; ++x) {
                        bool a = dmask[static_cast<size_t>(y - y0)][static_cast<size_t>(x - x0)];
                        bool b = synthworld::inside_shape(spec.shape,
                                                          static_cast<double>(x) - (cx + ox),
                                                          static_cast<double>(y) - (cy + oy),
                                                          spec.size);
                        inter += a && b;
                        uni += a || b;
                    }
                if (uni > 0) best_iou = std::max(best_iou, static_cast<double>(inter) /
                                                               static_cast<double>(uni));
            }
        acc += 0.5 * color_score + 0.5 * best_iou;
    }
    res.score = acc / static_cast<double>(F);
    if (!res.detected) res.score = 0.0;
    return res;
}

double motion_score(const VideoTensor& pixel, const synthworld::SubjectSpec& tracked,
                    const std::vector<std::array<double, 2>>& ref_path, const DetectConfig& dc) {
    if (pixel.space != Space::Pixel) throw contract_violation("motion_score: pixel video");
    int64_t F = pixel.frames(), C = pixel.channels(), H = pixel.height(), W = pixel.width();
    if (static_cast<int64_t>(ref_path.size()) != F)
        throw contract_violation("motion_score: reference path length must match frames");
    const Tensor& v = pixel.data;

    std::vector<std::array<double, 2>>det;
    std::vector<int64_t> frames;
    for (int64_t f = 0; f < F; ++f) {
        double cy = 0, cx = 0;
        int64_t n = 0;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                if (color_dist(v, f, y, x, C, H, W, tracked.color) < dc.color_thresh) {
                    cy += static_cast<double>(y);
                    cx += static_cast<double>(x);
                    ++n;
                }
        if (n >= dc.min_pixels) {
            det.push_back({cx / n, cy / n});
            frames.push_back(f);
        }
    }
    if (det.size() < 2) return 0.0;

    auto centered = [](const std::vector<std::array<double, 2>>& pts) {
        double mx = 0, my = 0;
        for (auto& p : pts) {
            mx += p[0];
            my += p[1];
        }
        mx /= static_cast<double>(pts.size());
        my /= static_cast<double>(pts.size());
        std::vector<double> out;
        for (auto& p : pts) {
            out.push_back(p[0] - mx);
            out.push_back(p[1] - my);
        }
        return out;
    };
    std::vector<std::array<double, 2>> ref_sel;
    for (int64_t f : frames) ref_sel.push_back(ref_path[static_cast<size_t>(f)]);
    std::vector<double> p = centered(det), q = centered(ref_sel);
    double np = 0, nq = 0, dotpq = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        np += p[i] * p[i];
        nq += q[i] * q[i];
        dotpq += p[i] * q[i];
    }
    if (np < 1e-9 || nq < 1e-9) return 0.0;
    return dotpq / std::sqrt(np * nq);
}

double temporal_consistency(const VideoTensor& pixel) {
    if (pixel.space != Space::Pixel) throw contract_violation("temporal_consistency: pixel video");
    int64_t F = pixel.frames(), C = pixel.channels(), H = pixel.height(), W = pixel.width();
    if (F == 1) return 1.0;
    int64_t gh = std::min<int64_t>(8, H), gw = std::min<int64_t>(8, W);
    int64_t by = H / gh, bx = W / gw;
    auto features = [&](int64_t f) {
        std::vector<double> out;
        for (int64_t c = 0; c < C; ++c)
            for (int64_t y = 0; y < gh; ++y)
                for (int64_t x = 0; x < gw; ++x) {
                    double s = 0;
                    for (int64_t yy = 0; yy < by; ++yy)
                        for (int64_t xx = 0; xx < bx; ++xx)
                            s += pixel.data[((f * C + c) * H + y * by + yy) * W + x * bx + xx];
                    out.push_back(s / static_cast<double>(by * bx));
                }
        double mean = 0;
        for (double u : out) mean += u;
        mean /= static_cast<double>(out.size());
        for (double& u : out) u -= mean;
        return out;
    };
    double acc = 0;
    std::vector<double> prev = features(0);
    for (int64_t f = 1; f < F; ++f) {
        std::vector<double> cur = features(f);
        double na = 0, nb = 0, d = 0;
        for (size_t i = 0; i < cur.size(); ++i) {
            na += prev[i] * prev[i];
            nb += cur[i] * cur[i];
            d += prev[i] * cur[i];
        }
        double cos = (na < 1e-12 || nb < 1e-12) ? 0.0 : d / std::sqrt(na * nb);
        acc += std::clamp(cos, 0.0, 1.0);
        prev = std::move(cur);
    }
    return acc / static_cast<double>(F - 1);
}

double leakage_score(const VideoTensor& pixel,
                     const std::vector<synthworld::SubjectSpec>& reference_specs,
                     const std::vector<synthworld::SubjectSpec>& target_specs,
                     const DetectConfig& dc) {
    if (pixel.space != Space::Pixel) throw contract_violation("leakage_score: pixel video");
    int64_t F = pixel.frames(), C = pixel.channels(), H = pixel.height(), W = pixel.width();
    const Tensor& v = pixel.data;
    int64_t ref_n = 0, total = 0;
    for (int64_t f = 0; f < F; ++f)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double best_ref = 1e9, best_tgt = 1e9;
                for (const auto& s : reference_specs)
                    best_ref = std::min(best_ref, color_dist(v, f, y, x, C, H, W, s.color));
                for (const auto& s : target_specs)
                    best_tgt = std::min(best_tgt, color_dist(v, f, y, x, C, H, W, s.color));
                if (std::min(best_ref, best_tgt) >= dc.color_thresh) continue;
                ++total;
                if (best_ref < best_tgt) ++ref_n;
            }
    if (total == 0) return 0.0;
    return static_cast<double>(ref_n) / static_cast<double>(total);
}

double attribute_mixing(const VideoTensor& pixel,
                        const std::vector<synthworld::SubjectSpec>& subjects,
                        const DetectConfig& dc) {
    if (pixel.space != Space::Pixel) throw contract_violation("attribute_mixing: pixel video");
    if (subjects.size() < 2) return 0.0;
    int64_t F = pixel.frames(), C = pixel.channels(), H = pixel.height(), W = pixel.width();
    const Tensor& v = pixel.data;
    double weighted = 0;
    int64_t total_px = 0;
    for (int64_t f = 0; f < F; ++f) {
        // label each pixel with its nearest subject if within threshold
        std::vector<int> label(static_cast<size_t>(H * W), -1);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                double best = dc.color_thresh;
                int who = -1;
                for (size_t s = 0; s < subjects.size(); ++s) {
                    double d = color_dist(v, f, y, x, C, H, W, subjects[s].color);
                    if (d < best) {
                        best = d;
                        who = static_cast<int>(s);
                    }
                }
                label[static_cast<size_t>(y * W + x)] = who;
            }
        // connected components over labeled pixels (4-connectivity)
        std::vector<bool> seen(static_cast<size_t>(H * W), false);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                int64_t p0 = y * W + x;
                if (label[static_cast<size_t>(p0)] < 0 || seen[static_cast<size_t>(p0)]) continue;
                std::deque<int64_t> queue{p0};
                seen[static_cast<size_t>(p0)] = true;
                std::vector<int64_t> counts(subjects.size(), 0);
                int64_t size = 0;
                while (!queue.empty()) {
                    int64_t p = queue.front();
                    queue.pop_front();
                    ++size;
                    counts[static_cast<size_t>(label[static_cast<size_t>(p)])]++;
                    int64_t yy = p / W, xx = p % W;
                    const int64_t dy[4] = {1, -1, 0, 0}, dx[4] = {0, 0, 1, -1};
                    for (int k = 0; k < 4; ++k) {
                        int64_t ny = yy + dy[k], nx = xx + dx[k];
                        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                        int64_t np = ny * W + nx;
                        if (seen[static_cast<size_t>(np)] ||
                            label[static_cast<size_t>(np)] < 0)
                            continue;
                        seen[static_cast<size_t>(np)] = true;
                        queue.push_back(np);
                    }
                }
                int64_t majority = *std::max_element(counts.begin(), counts.end());
                weighted += static_cast<double>(size - majority);
                total_px += size;
            }
    }
    if (total_px == 0) return 0.0;
    return weighted / static_cast<double>(total_px);
}

std::string format_metrics_table(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "id\tidentity\tmotion\tconsistency\tleakage\tmixing\n";
    os.setf(std::ios::fixed);
    os.precision(4);
    for (const auto& r : rows)
        os << r.id << "\t" << r.identity << "\t" << r.motion << "\t" << r.consistency << "\t"
           << r.leakage << "\t" << r.mixing << "\n";
    return os.str();
}

void write_report(const std::string& dir, const std::vector<MetricsRow>& rows,
                  const std::vector<std::pair<std::string, VideoTensor>>& grids) {
    std::filesystem::create_directories(dir);
    atomic_write_file(dir + "/metrics.tsv", format_metrics_table(rows));
    for (auto& [name, vid] : grids) write_frame_grid(dir + "/" + name + ".png", vid);
}

}  // namespace vidfuse::eval
