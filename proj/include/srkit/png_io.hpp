#pragma once

#include <string>

#include "srkit/image.hpp"

namespace srkit {

// Reads any 8/16-bit gray/palette/RGB(A) PNG as 8-bit RGB.
ImageU8 load_png(const std::string& path);

// Writes 8-bit RGB. Output bytes are a pure function of the pixels, so
// identical images produce identical files.
void save_png(const ImageU8& img, const std::string& path);

}  // namespace srkit
