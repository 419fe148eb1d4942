#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "srkit/image.hpp"
#include "srkit/png_io.hpp"
#include "srkit/resize.hpp"

namespace srkit {

struct SrImage {
  std::string name;  // file stem
  ImageU8 hr;
};

// Loads every .png in a directory as an HR image, sorted by filename so the
// dataset order is stable.
inline std::vector<SrImage> load_hr_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("dataset: '" + dir + "' is not a directory");
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw DataError("dataset: no .png files in '" + dir + "'");
  std::vector<SrImage> out;
  for (const auto& p : paths) out.push_back({p.stem().string(), load_png(p.string())});
  return out;
}

struct SrPair {
  ImageU8 hr;  // cropped so dims are multiples of the scale
  ImageU8 lr;  // bicubic downscale of the cropped HR
};

// Derives the aligned LR/HR pair for one scale: the HR image is cropped (top
// left) to a multiple of the scale, then downscaled bicubically.
inline SrPair make_sr_pair(const ImageU8& hr, int scale) {
  if (scale < 1) throw UsageError("make_sr_pair: scale must be >= 1");
  const int w = hr.width - hr.width % scale;
  const int h = hr.height - hr.height % scale;
  if (w < scale || h < scale)
    throw DataError("make_sr_pair: image " + std::to_string(hr.width) + "x" +
                    std::to_string(hr.height) + " too small for scale " + std::to_string(scale));
  SrPair p;
  if (w == hr.width && h == hr.height) {
    p.hr = hr;
  } else {
    p.hr = ImageU8(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) p.hr.at(x, y, c) = hr.at(x, y, c);
  }
  p.lr = bicubic_resize(p.hr, w / scale, h / scale);
  return p;
}

}  // namespace srkit
