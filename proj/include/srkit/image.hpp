#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "srkit/tensor.hpp"

namespace srkit {

// 8-bit RGB image, row-major, three bytes per pixel.
struct ImageU8 {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int w, int h) : width(w), height(h), pixels(size_t(w) * h * 3, 0) {
    if (w < 1 || h < 1) throw ShapeError("image: dims must be positive");
  }

  std::uint8_t at(int x, int y, int c) const { return pixels[(size_t(y) * width + x) * 3 + c]; }
  std::uint8_t& at(int x, int y, int c) { return pixels[(size_t(y) * width + x) * 3 + c]; }
};

inline ImageU8 crop_border(const ImageU8& img, int crop) {
  if (crop == 0) return img;
  if (crop < 0 || img.width - 2 * crop < 1 || img.height - 2 * crop < 1)
    throw ShapeError("crop_border: crop " + std::to_string(crop) + " too large for " +
                     std::to_string(img.width) + "x" + std::to_string(img.height));
  ImageU8 out(img.width - 2 * crop, img.height - 2 * crop);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x + crop, y + crop, c);
  return out;
}

// Tensor layout (1, 3, H, W); values are pixel/255 exactly.
template <typename Scalar = float>
Tensor<Scalar> to_tensor(const ImageU8& img) {
  Tensor<Scalar> t(1, 3, img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(0, c, y, x) = static_cast<Scalar>(img.at(x, y, c)) / Scalar(255);
  return t;
}

// Inverse of to_tensor: scale by 255, round to nearest, clip to [0, 255].
template <typename Scalar>
ImageU8 to_image(const Tensor<Scalar>& t) {
  if (t.n() != 1 || t.c() != 3)
    throw ShapeError("to_image: expected shape (1,3,H,W), got (" + t.shape_str() + ")");
  ImageU8 img(static_cast<int>(t.w()), static_cast<int>(t.h()));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const long v = std::lround(double(t(0, c, y, x)) * 255.0);
        img.at(x, y, c) = static_cast<std::uint8_t>(v < 0 ? 0 : v > 255 ? 255 : v);
      }
  return img;
}

}  // namespace srkit
