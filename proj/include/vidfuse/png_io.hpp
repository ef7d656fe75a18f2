#ifndef VIDFUSE_PNG_IO_HPP
#define VIDFUSE_PNG_IO_HPP

#include <string>
#include <vector>

#include "vidfuse/video.hpp"

namespace vidfuse {

void write_png_rgb8(const std::string& path, int64_t width, int64_t height,
                    const std::vector<uint8_t>& rgb);

// frames tiled left-to-right, 1px separator; videos may be pixel (rendered
// directly) or latent (decoded channel preview)
void write_frame_grid(const std::string& path, const VideoTensor& pixel_video);

}  // namespace vidfuse

#endif
