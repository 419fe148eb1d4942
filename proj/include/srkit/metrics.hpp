#pragma once

// Image-quality metrics. Y-channel evaluation uses BT.601 luma computed in
// double precision from RGB in [0,1]:
//   Y = 16 + 65.481 r + 128.553 g + 24.966 b
// and keeps the unrounded values.

#include <cmath>
#include <limits>
#include <vector>

#include "srkit/image.hpp"

namespace srkit {

inline double luma(double r, double g, double b) {
  return 16.0 + 65.481 * r + 128.553 * g + 24.966 * b;
}

inline std::vector<double> luma_plane(const ImageU8& img) {
  std::vector<double> out(size_t(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out[size_t(y) * img.width + x] = luma(img.at(x, y, 0) / 255.0, img.at(x, y, 1) / 255.0,
                                            img.at(x, y, 2) / 255.0);
  return out;
}

// Peak signal-to-noise ratio in dB: 10 log10(255^2 / MSE). Returns +infinity
// when the evaluated regions are identical (MSE = 0).
inline double psnr(const ImageU8& a, const ImageU8& b, int border_crop = 0, bool y_only = true) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError("psnr: image dims differ");
  if (border_crop >= (std::min(a.width, a.height) + 1) / 2)
    throw ShapeError("psnr: border crop too large");
  const ImageU8 ca = crop_border(a, border_crop);
  const ImageU8 cb = crop_border(b, border_crop);

  double se = 0;
  std::uint64_t n = 0;
  if (y_only) {
    const auto ya = luma_plane(ca), yb = luma_plane(cb);
    for (size_t i = 0; i < ya.size(); ++i) {
      const double d = ya[i] - yb[i];
      se += d * d;
    }
    n = ya.size();
  } else {
    for (size_t i = 0; i < ca.pixels.size(); ++i) {
      const double d = double(ca.pixels[i]) - double(cb.pixels[i]);
      se += d * d;
    }
    n = ca.pixels.size();
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / double(n);
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size_t(size) * size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      w[size_t(i) * size + j] = std::exp(-d2 / (2.0 * sigma * sigma));
      sum += w[size_t(i) * size + j];
    }
  for (double& v : w) v /= sum;
  return w;
}

// Mean local SSIM of two equally sized planes over all fully interior window
// positions.
inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int width,
                         int height, int window, double sigma) {
  const auto w = gaussian_window(window, sigma);
  constexpr double kL = 255.0;
  const double c1 = (0.01 * kL) * (0.01 * kL);
  const double c2 = (0.03 * kL) * (0.03 * kL);

  double total = 0;
  std::uint64_t count = 0;
  for (int y = 0; y + window <= height; ++y)
    for (int x = 0; x + window <= width; ++x) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int i = 0; i < window; ++i)
        for (int j = 0; j < window; ++j) {
          const double wv = w[size_t(i) * window + j];
          const double va = a[size_t(y + i) * width + (x + j)];
          const double vb = b[size_t(y + i) * width + (x + j)];
          mx += wv * va;
          my += wv * vb;
          mxx += wv * va * va;
          myy += wv * vb * vb;
          mxy += wv * va * vb;
        }
      const double sx = mxx - mx * mx;
      const double sy = myy - my * my;
      const double sxy = mxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * sxy + c2)) /
               ((mx * mx + my * my + c1) * (sx + sy + c2));
      ++count;
    }
  if (count == 0) throw ShapeError("ssim: image smaller than the window");
  return total / double(count);
}

}  // namespace detail

// Structural similarity with a Gaussian window (default 11x11, sigma 1.5).
// y_only evaluates the BT.601 luma plane; otherwise the three RGB channels
// are scored separately and averaged.
inline double ssim(const ImageU8& a, const ImageU8& b, int window = 11, bool y_only = true) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError("ssim: image dims differ");
  if (window < 1 || window > std::min(a.width, a.height))
    throw ShapeError("ssim: window must fit inside the images");
  constexpr double kSigma = 1.5;
  if (y_only)
    return detail::ssim_plane(luma_plane(a), luma_plane(b), a.width, a.height, window, kSigma);
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> pa(size_t(a.width) * a.height), pb(pa.size());
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        pa[size_t(y) * a.width + x] = a.at(x, y, c);
        pb[size_t(y) * a.width + x] = b.at(x, y, c);
      }
    total += detail::ssim_plane(pa, pb, a.width, a.height, window, kSigma);
  }
  return total / 3.0;
}

}  // namespace srkit
