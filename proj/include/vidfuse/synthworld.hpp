#ifndef VIDFUSE_SYNTHWORLD_HPP
#define VIDFUSE_SYNTHWORLD_HPP

#include <array>
#include <string>
#include <vector>

#include "vidfuse/rng.hpp"
#include "vidfuse/video.hpp"

namespace vidfuse::synthworld {

enum class Shape { Circle, Square, Triangle, Star };
enum class PathClass { Static, Bounce, Orbit, Chase, Ride, Cross };

std::string shape_word(Shape s);
std::string color_word(const std::array<double, 3>& rgb);  // nearest palette name
const std::vector<std::pair<std::string, std::array<double, 3>>>& palette();
std::array<double, 3> palette_color(const std::string& word);

struct SubjectSpec {
    Shape shape = Shape::Circle;
    std::array<double, 3> color{0.5, 0.5, 0.5};  // RGB in [0,1]
    int texture = 0;  // 0 flat, 1 speckle (seed-dependent), 2 rings (deterministic)
    double size = 5.0;
};

struct Trajectory {
    PathClass cls = PathClass::Static;
    int role = 0;          // pairing role for coupled classes
    double speed = 1.0;    // px/frame for linear paths, revolutions/clip for orbit
    double phase = 0.0;
    double cx = 16.0, cy = 16.0;
    double radius = 7.0;
    double dir_x = 1.0, dir_y = 0.0;
    int lag = 2;           // chase delay in frames
};

struct SceneSpec {
    std::vector<SubjectSpec> subjects;
    std::vector<Trajectory> trajectories;
    std::array<double, 3> bg{0.45, 0.45, 0.45};
    std::array<double, 3> bg2{0.45, 0.45, 0.45};  // used when gradient
    bool gradient = false;
    std::string bg_word = "gray";
    std::string verb = "rests";
    bool static_caption = false;  // "a static video of ..." caption form
    int64_t frames = 8;
    int64_t hw = 32;

    void validate() const;
};

struct RenderResult {
    VideoTensor video;           // pixel space, [F, 3, H, W], values in [-1, 1]
    std::vector<Tensor> masks;   // per subject, [F, H, W], {0,1}
    std::string caption;
};

// center of subject `idx` at frame f; pure function of the spec
std::array<double, 2> trajectory_position(const SceneSpec& spec, size_t idx, int64_t f);
std::string caption_of(const SceneSpec& spec);
bool inside_shape(Shape shape, double dx, double dy, double size);

RenderResult render(const SceneSpec& spec, uint64_t seed);

// fixed orthonormal Haar map per 2x2 patch and channel; pixel [F,C,H,W] ->
// latent [F, 4C, H/2, W/2]; exact round-trip, energy preserving
VideoTensor to_latent(const VideoTensor& pixel_video);
VideoTensor from_latent(const VideoTensor& latent_video);

struct BenchSubject {
    std::string id;
    SubjectSpec spec;
    std::vector<RenderResult> stills;  // 3-5 single-frame reference images
};

struct BenchMotion {
    std::string id;
    SceneSpec scene;          // performer pair + coupled trajectories
    RenderResult reference;   // the rendered motion video
    std::string motion_prompt;  // appearance-free: "a <class1> <verb> a <class2>"
};

struct BenchCombo {
    int motion = 0;
    int pair = 0;
    std::string bg_word;
};

struct AuxClip {
    SceneSpec scene;
    RenderResult clip;
};

struct Benchmark {
    std::vector<BenchSubject> subjects;          // 6
    std::vector<std::array<int, 2>> pairs;       // 3 subject pairs
    std::vector<BenchMotion> motions;            // 6
    std::vector<BenchCombo> combos;              // 72
    std::vector<AuxClip> aux;                    // disjoint regularization pool
};

// 6 motions x 3 subject pairs x 4 backgrounds, plus the aux pool; aux shares
// no (shape, color) combination or path class with the benchmark proper
Benchmark make_benchmark(uint64_t seed, int aux_count = 192);

const std::vector<std::string>& background_words();
std::array<double, 3> background_color(const std::string& word);

}  // namespace vidfuse::synthworld

#endif
