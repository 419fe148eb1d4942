#pragma once

// Benchmark-style evaluation: for each HR image, derive the LR input
// bicubically, reconstruct, and score PSNR/SSIM on the BT.601 luma plane
// with a border crop equal to the scale.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "srkit/dataset.hpp"
#include "srkit/metrics.hpp"
#include "srkit/network.hpp"

namespace srkit {

struct EvalRow {
  std::string image;
  int scale = 0;
  double psnr_db = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

namespace detail {

template <typename Fn>
EvalReport evaluate_with(const std::vector<SrImage>& images, int scale, Fn&& reconstruct) {
  if (images.empty()) throw DataError("evaluate: empty dataset");
  EvalReport rep;
  for (const auto& im : images) {
    const SrPair pair = make_sr_pair(im.hr, scale);
    const ImageU8 sr = reconstruct(pair);
    EvalRow row;
    row.image = im.name;
    row.scale = scale;
    row.psnr_db = psnr(pair.hr, sr, scale, /*y_only=*/true);
    row.ssim = ssim(crop_border(pair.hr, scale), crop_border(sr, scale));
    rep.rows.push_back(row);
    rep.mean_psnr += row.psnr_db;
    rep.mean_ssim += row.ssim;
  }
  rep.mean_psnr /= double(rep.rows.size());
  rep.mean_ssim /= double(rep.rows.size());
  return rep;
}

}  // namespace detail

template <typename Scalar>
ImageU8 upscale_image(const Network<Scalar>& net, const ImageU8& lr, int scale) {
  return to_image(net.forward(to_tensor<Scalar>(lr), scale));
}

// Classic baseline: the LR input re-upscaled bicubically.
inline EvalReport evaluate_bicubic(const std::vector<SrImage>& images, int scale) {
  return detail::evaluate_with(images, scale, [&](const SrPair& p) {
    return bicubic_resize(p.lr, p.hr.width, p.hr.height);
  });
}

template <typename Scalar>
EvalReport evaluate_network(const Network<Scalar>& net, const std::vector<SrImage>& images,
                            int scale) {
  return detail::evaluate_with(
      images, scale, [&](const SrPair& p) { return upscale_image(net, p.lr, scale); });
}

inline std::string eval_csv(const EvalReport& rep) {
  auto fmt = [](double v) {
    if (std::isinf(v)) return std::string("inf");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };
  std::string out = "image,scale,psnr_db,ssim\n";
  for (const auto& r : rep.rows)
    out += r.image + "," + std::to_string(r.scale) + "," + fmt(r.psnr_db) + "," + fmt(r.ssim) +
           "\n";
  out += "mean," + (rep.rows.empty() ? std::string("0") : std::to_string(rep.rows[0].scale)) +
         "," + fmt(rep.mean_psnr) + "," + fmt(rep.mean_ssim) + "\n";
  return out;
}

}  // namespace srkit
