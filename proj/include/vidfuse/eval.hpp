#ifndef VIDFUSE_EVAL_HPP
#define VIDFUSE_EVAL_HPP

#include <array>
#include <string>
#include <vector>

#include "vidfuse/synthworld.hpp"
#include "vidfuse/video.hpp"

namespace vidfuse::eval {

struct DetectConfig {
    double color_thresh = 0.15;  // RGB unit-cube distance for "subject pixel"
    int64_t min_pixels = 4;
};

struct IdentityResult {
    double score = 0.0;
    bool detected = false;
};

// Appearance agreement with a subject spec: color fidelity of detected
// pixels plus shape-template IoU at the detected centroid, averaged over
// frames. Background-invariant by construction (operates on detected
// regions only).
IdentityResult identity_score(const VideoTensor& pixel, const synthworld::SubjectSpec& spec,
                              const DetectConfig& dc = {});

// Normalized path correlation between the tracked subject's centroids and a
// reference trajectory; 1 = same path, 0 = uncorrelated/static, negative =
// reversed.
double motion_score(const VideoTensor& pixel, const synthworld::SubjectSpec& tracked,
                    const std::vector<std::array<double, 2>>& ref_path,
                    const DetectConfig& dc = {});

// Cosine similarity of mean-centered downsampled consecutive frames,
// clamped to [0, 1]. Single-frame videos score 1 by convention.
double temporal_consistency(const VideoTensor& pixel);

// Fraction of detected subject pixels whose color sits closer to a
// reference-video appearance than to any target appearance.
double leakage_score(const VideoTensor& pixel,
                     const std::vector<synthworld::SubjectSpec>& reference_specs,
                     const std::vector<synthworld::SubjectSpec>& target_specs,
                     const DetectConfig& dc = {});

// Within-region color impurity across two subjects: connected blobs of
// subject-colored pixels are assigned to the majority subject; the score is
// the pixel-weighted minority fraction. Single-subject inputs score 0.
double attribute_mixing(const VideoTensor& pixel,
                        const std::vector<synthworld::SubjectSpec>& subjects,
                        const DetectConfig& dc = {});

struct MetricsRow {
    std::string id;
    double identity = 0, motion = 0, consistency = 0, leakage = 0, mixing = 0;
};

// metrics table (TSV) plus frame-grid PNGs under dir
void write_report(const std::string& dir, const std::vector<MetricsRow>& rows,
                  const std::vector<std::pair<std::string, VideoTensor>>& grids);
std::string format_metrics_table(const std::vector<MetricsRow>& rows);

}  // namespace vidfuse::eval

#endif
