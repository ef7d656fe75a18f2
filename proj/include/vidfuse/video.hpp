#ifndef VIDFUSE_VIDEO_HPP
#define VIDFUSE_VIDEO_HPP

#include "vidfuse/tensor.hpp"

namespace vidfuse {

enum class Space { Pixel, Latent };

// F x C x H x W video, tagged with the space it lives in. Pixel-space values
// lie in [-1, 1].
struct VideoTensor {
    Tensor data;  // [F, C, H, W]
    Space space = Space::Latent;

    VideoTensor() = default;
    VideoTensor(Tensor t, Space s) : data(std::move(t)), space(s) {
        if (data.ndim() != 4) throw contract_violation("video: expected F x C x H x W");
        if (data.shape[0] < 1) throw contract_violation("video: F >= 1 required");
    }

    int64_t frames() const { return data.shape[0]; }
    int64_t channels() const { return data.shape[1]; }
    int64_t height() const { return data.shape[2]; }
    int64_t width() const { return data.shape[3]; }

    void require_finite(const char* where) const {
        if (!data.all_finite()) throw numerical_failure(std::string(where) + ": non-finite values");
    }
};

}  // namespace vidfuse

#endif
