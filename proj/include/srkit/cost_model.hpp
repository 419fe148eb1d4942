#pragma once

// Analytic, execution-free parameter and Mult-Adds accounting for any
// NetworkSpec at a target HR resolution, plus an instrumented-execution
// cross-check. Conventions: a convolution costs K^2 * (C_in/G) * C_out MACs
// per output pixel; bias adds, activations, element-wise sums, and pixel
// shuffles cost zero; body layers run at the LR pixel count (kept as an
// exact rational), the second stage of the x4 head at 4x LR, and the exit
// conv at HR.

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "srkit/network.hpp"

namespace srkit {

struct LayerCost {
  std::string kind;
  std::string name;
  std::uint64_t params = 0;  // 0 for repeated uses of a shared entry
  double mult_adds = 0;
  Index out_w = 0, out_h = 0;
};

struct CostReport {
  std::vector<LayerCost> per_layer;
  std::uint64_t total_params = 0;
  double total_mult_adds = 0;
  Index hr_w = 0, hr_h = 0;
  int scale = 0;
};

// Cost ratio of an efficient residual unit (two grouped KxK convs plus one
// pointwise) over a plain residual unit (two KxK convs): 1/G + 1/(2K^2),
// evaluated as a single division so it agrees bitwise with the quotient of
// the two integer MAC counts.
inline double residual_e_ratio(int G, int K) {
  if (G < 1 || K < 1) throw UsageError("residual_e_ratio: G and K must be >= 1");
  return (2.0 * K * K + G) / (2.0 * G * K * K);
}

inline CostReport count(const NetworkSpec& spec, Index hr_w, Index hr_h, int scale) {
  validate(spec);
  if (hr_w < 1 || hr_h < 1) throw UsageError("cost: HR dims must be positive");
  bool ok = false;
  for (int s : spec.scales) ok = ok || s == scale;
  if (!ok) throw UsageError("cost: scale " + std::to_string(scale) + " not in the spec");

  CostReport rep;
  rep.hr_w = hr_w;
  rep.hr_h = hr_h;
  rep.scale = scale;
  // Exact rational LR pixel count; integer whenever scale^2 divides the HR
  // pixel count (true for 720p at x2/x3/x4).
  const double lr_px = double(hr_w) * double(hr_h) / double(scale * scale);

  std::set<std::string> seen;
  for (const ConvLayerInfo& li : conv_layers(spec)) {
    LayerCost lc;
    lc.kind = layer_kind_name(li.kind);
    lc.name = li.use_name;
    if (seen.insert(li.param_name).second)
      lc.params = std::uint64_t(li.cout) * std::uint64_t(li.cin / li.groups) *
                      std::uint64_t(li.k * li.k) +
                  std::uint64_t(li.cout);

    const double per_px = double(li.k * li.k) * double(li.cin / li.groups) * double(li.cout);
    double px = 0;
    Index fac = 1;  // spatial edge factor relative to LR, for the display dims
    switch (li.kind) {
      case LayerKind::Entry:
      case LayerKind::Unit:
      case LayerKind::LocalFusion:
      case LayerKind::GlobalFusion:
        px = lr_px;
        break;
      case LayerKind::Head:
        if (li.head_scale != scale) {
          px = 0;  // inactive head: parameters exist, no execution cost
        } else {
          px = lr_px * li.px_factor;
          fac = li.px_factor == 4 ? 2 : 1;
        }
        break;
      case LayerKind::Exit:
        px = lr_px * scale * scale;
        fac = scale;
        break;
    }
    lc.mult_adds = per_px * px;
    lc.out_w = (hr_w / scale) * fac;
    lc.out_h = (hr_h / scale) * fac;
    if (li.kind == LayerKind::Exit) {
      lc.out_w = hr_w;
      lc.out_h = hr_h;
    }
    rep.total_params += lc.params;
    rep.total_mult_adds += lc.mult_adds;
    rep.per_layer.push_back(std::move(lc));
  }
  return rep;
}

// Builds the network, runs an instrumented forward pass on a 3 x lr_h x lr_w
// input at every supported scale, and requires the executed MAC counter and
// the built store's parameter count to equal the analytic report exactly.
inline void verify_against_built(const NetworkSpec& spec, Index lr_h = 8, Index lr_w = 8) {
  auto net = build_network<float>(spec, 1);
  for (int s : spec.scales) {
    const CostReport rep = count(spec, lr_w * s, lr_h * s, s);
    if (rep.total_params != net.store.param_count())
      throw NumericError("cost verification: analytic params " +
                         std::to_string(rep.total_params) + " != built " +
                         std::to_string(net.store.param_count()) + " for variant " + spec.variant);
    MacCounter macs;
    Tensor<float> x(1, 3, lr_h, lr_w);
    (void)net.forward(x, s, nullptr, &macs);
    const auto analytic = static_cast<std::uint64_t>(std::llround(rep.total_mult_adds));
    if (analytic != macs.total())
      throw NumericError("cost verification: analytic Mult-Adds " + std::to_string(analytic) +
                         " != instrumented " + std::to_string(macs.total()) + " for variant " +
                         spec.variant + " at x" + std::to_string(s));
  }
}

namespace detail {

inline std::string format_mult_adds(double v) {
  char buf[64];
  if (v == std::floor(v) && std::abs(v) < 9e15)
    std::snprintf(buf, sizeof(buf), "%" PRIu64, static_cast<std::uint64_t>(v));
  else
    std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace detail

inline std::string report_csv(const CostReport& rep) {
  std::string out = "layer,name,params,mult_adds,out_w,out_h\n";
  for (const auto& lc : rep.per_layer) {
    out += lc.kind + "," + lc.name + "," + std::to_string(lc.params) + "," +
           detail::format_mult_adds(lc.mult_adds) + "," + std::to_string(lc.out_w) + "," +
           std::to_string(lc.out_h) + "\n";
  }
  out += "total,," + std::to_string(rep.total_params) + "," +
         detail::format_mult_adds(rep.total_mult_adds) + "," + std::to_string(rep.hr_w) + "," +
         std::to_string(rep.hr_h) + "\n";
  return out;
}

inline std::string report_table(const CostReport& rep) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-14s %-16s %12s %16s %12s\n", "layer", "name", "params",
                "mult_adds", "resolution");
  std::string out = buf;
  out += std::string(74, '-') + "\n";
  for (const auto& lc : rep.per_layer) {
    const std::string res = std::to_string(lc.out_w) + "x" + std::to_string(lc.out_h);
    std::snprintf(buf, sizeof(buf), "%-14s %-16s %12" PRIu64 " %16s %12s\n", lc.kind.c_str(),
                  lc.name.c_str(), lc.params, detail::format_mult_adds(lc.mult_adds).c_str(),
                  res.c_str());
    out += buf;
  }
  out += std::string(74, '-') + "\n";
  std::snprintf(buf, sizeof(buf), "%-14s %-16s %12" PRIu64 " %16s %12s\n", "total", "", rep.total_params,
                detail::format_mult_adds(rep.total_mult_adds).c_str(),
                (std::to_string(rep.hr_w) + "x" + std::to_string(rep.hr_h)).c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf), "scale x%d, %.4f G Mult-Adds, %.1f K params\n", rep.scale,
                rep.total_mult_adds / 1e9, double(rep.total_params) / 1e3);
  out += buf;
  return out;
}

}  // namespace srkit
