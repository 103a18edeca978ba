#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace shade::detail {

// Minimal RGB8 PNG writer (zlib-deflated, filter 0 scanlines).
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& rgb);

}  // namespace shade::detail
