#pragma once

// Separable bicubic resampling (Keys kernel, a = -0.5). Source positions are
// center-aligned: src = (dst + 0.5) * (in/out) - 0.5. On downscale the kernel
// is stretched by the scale factor (antialiasing). Edge samples clamp;
// weights are normalized to sum to 1; rounding to 8 bits happens once, after
// both passes.

#include <algorithm>
#include <cmath>
#include <vector>

#include "srkit/image.hpp"

namespace srkit {

namespace detail {

inline double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::vector<int> idx;   // clamped source indices
  std::vector<double> w;  // normalized weights
};

// Contributing source samples for output position o along one axis.
inline Taps bicubic_taps(int in_size, int out_size, int o) {
  const double ratio = double(in_size) / double(out_size);
  const double stretch = std::max(1.0, ratio);  // antialias on downscale
  const double src = (o + 0.5) * ratio - 0.5;
  const int lo = static_cast<int>(std::ceil(src - 2.0 * stretch));
  const int hi = static_cast<int>(std::floor(src + 2.0 * stretch));
  Taps taps;
  double sum = 0;
  for (int j = lo; j <= hi; ++j) {
    const double w = cubic_kernel((src - j) / stretch);
    if (w == 0.0) continue;
    taps.idx.push_back(std::clamp(j, 0, in_size - 1));
    taps.w.push_back(w);
    sum += w;
  }
  for (double& w : taps.w) w /= sum;
  return taps;
}

}  // namespace detail

inline ImageU8 bicubic_resize(const ImageU8& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ShapeError("bicubic_resize: output dims must be positive");
  if (out_w == img.width && out_h == img.height) return img;

  std::vector<detail::Taps> xt(out_w), yt(out_h);
  for (int x = 0; x < out_w; ++x) xt[x] = detail::bicubic_taps(img.width, out_w, x);
  for (int y = 0; y < out_h; ++y) yt[y] = detail::bicubic_taps(img.height, out_h, y);

  // Horizontal pass in double precision.
  std::vector<double> mid(size_t(img.height) * out_w * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto& t = xt[x];
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (size_t k = 0; k < t.idx.size(); ++k) acc += t.w[k] * img.at(t.idx[k], y, c);
        mid[(size_t(y) * out_w + x) * 3 + c] = acc;
      }
    }

  // Vertical pass, then one rounding step.
  ImageU8 out(out_w, out_h);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto& t = yt[y];
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (size_t k = 0; k < t.idx.size(); ++k)
          acc += t.w[k] * mid[(size_t(t.idx[k]) * out_w + x) * 3 + c];
        const long v = std::lround(acc);
        out.at(x, y, c) = static_cast<std::uint8_t>(v < 0 ? 0 : v > 255 ? 255 : v);
      }
    }
  return out;
}

}  // namespace srkit
