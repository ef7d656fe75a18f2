#ifndef VIDFUSE_TESTS_HELPERS_HPP
#define VIDFUSE_TESTS_HELPERS_HPP

#include "vidfuse/denoiser.hpp"
#include "vidfuse/scheduler.hpp"

namespace vftest {

inline vidfuse::DenoiserConfig tiny_config(int64_t frames = 2, int64_t hw = 8, int64_t c = 4,
                                           int64_t d = 16) {
    vidfuse::DenoiserConfig cfg;
    cfg.channels = c;
    cfg.height = hw;
    cfg.width = hw;
    cfg.frames = frames;
    cfg.model_width = d;
    cfg.heads = 2;
    cfg.text_dim = d;
    cfg.mid_blocks = 1;
    cfg.vocab_size = static_cast<int64_t>(vidfuse::Vocabulary::standard_words().size());
    return cfg;
}

// adapter with nonzero factors so gradients are generic
inline vidfuse::LoraDelta randomized(vidfuse::LoraDelta d, uint64_t seed, double down_sd = 0.3,
                                     double up_sd = 0.05) {
    vidfuse::RandomStream rs(seed);
    for (auto& [_, l] : d.layers) {
        l.down = rs.normal_tensor(l.down.shape, down_sd);
        l.up = rs.normal_tensor(l.up.shape, up_sd);
    }
    return d;
}

}  // namespace vftest

#endif
