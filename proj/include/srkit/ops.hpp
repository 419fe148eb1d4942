#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <tuple>
#include <vector>

#include "srkit/parallel.hpp"
#include "srkit/tensor.hpp"

namespace srkit {

// Counts the multiply-accumulate operations a convolution performs, one per
// kernel tap per output element (zero-padding taps included, matching the
// K^2 * (C_in/G) * C_out * H * W accounting).
struct MacCounter {
  void add(std::uint64_t n) { macs.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t total() const { return macs.load(); }
  std::atomic<std::uint64_t> macs{0};
};

// Stride is always 1; padding must be (K-1)/2 so spatial size is preserved.
// Weight layout: (C_out, C_in/groups, K, K). Bias: (1, C_out, 1, 1).
template <typename Scalar>
struct ConvParams {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  int groups = 1;
  int padding = 0;

  Index out_channels() const { return weight.n(); }
  Index in_channels() const { return weight.c() * groups; }
  Index kernel() const { return weight.h(); }
};

template <typename Scalar>
ConvParams<Scalar> make_conv_params(Index in_ch, Index out_ch, Index k, int groups = 1) {
  if (groups < 1 || in_ch % groups != 0 || out_ch % groups != 0)
    throw ShapeError("conv: channels (" + std::to_string(in_ch) + "->" + std::to_string(out_ch) +
                     ") not divisible by groups " + std::to_string(groups));
  if (k < 1 || k % 2 == 0)
    throw ShapeError("conv: kernel size must be odd, got " + std::to_string(k));
  ConvParams<Scalar> p;
  p.weight = Tensor<Scalar>(out_ch, in_ch / groups, k, k);
  p.bias = Tensor<Scalar>(1, out_ch, 1, 1);
  p.groups = groups;
  p.padding = static_cast<int>((k - 1) / 2);
  return p;
}

namespace detail {

template <typename Scalar>
void validate_conv(const Tensor<Scalar>& x, const ConvParams<Scalar>& p) {
  if (x.c() != p.in_channels())
    throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels, expected " +
                     std::to_string(p.in_channels()));
  if (x.h() < 1 || x.w() < 1)
    throw ShapeError("conv2d: spatial dims must be >= 1, got (" + x.shape_str() + ")");
  const Index k = p.kernel();
  if (p.weight.h() != p.weight.w() || k % 2 == 0)
    throw ShapeError("conv2d: kernel must be square and odd, got " +
                     std::to_string(p.weight.h()) + "x" + std::to_string(p.weight.w()));
  if (p.padding != (k - 1) / 2)
    throw ShapeError("conv2d: padding " + std::to_string(p.padding) + " does not preserve size for K=" +
                     std::to_string(k));
  if (p.groups < 1 || p.out_channels() % p.groups != 0)
    throw ShapeError("conv2d: output channels " + std::to_string(p.out_channels()) +
                     " not divisible by groups " + std::to_string(p.groups));
  if (p.bias.c() != p.out_channels() || p.bias.size() != p.out_channels())
    throw ShapeError("conv2d: bias length " + std::to_string(p.bias.size()) + " != C_out " +
                     std::to_string(p.out_channels()));
}

// Reference path used when a MacCounter is attached: walks every kernel tap
// (padding included) so the counter reflects the full composite MAC count.
// Per-element accumulation order is the same as the fast path: bias first,
// then input channel, then kernel row, then kernel column.
template <typename Scalar>
void conv2d_counting_plane(const Tensor<Scalar>& x, const ConvParams<Scalar>& p,
                           Tensor<Scalar>& out, Index n, Index co, MacCounter* macs) {
  const Index C = x.c(), H = x.h(), W = x.w();
  const Index K = p.kernel(), G = p.groups, pad = p.padding;
  const Index cig = C / G, cog = p.out_channels() / G;
  const Index g = co / cog;
  const Scalar bias = p.bias.data()[co];
  std::uint64_t count = 0;
  for (Index oh = 0; oh < H; ++oh) {
    for (Index ow = 0; ow < W; ++ow) {
      Scalar acc = bias;
      for (Index cl = 0; cl < cig; ++cl) {
        const Index ci = g * cig + cl;
        for (Index kh = 0; kh < K; ++kh) {
          const Index ih = oh + kh - pad;
          for (Index kw = 0; kw < K; ++kw) {
            const Index iw = ow + kw - pad;
            const bool inside = ih >= 0 && ih < H && iw >= 0 && iw < W;
            const Scalar v = inside ? x(n, ci, ih, iw) : Scalar(0);
            acc += p.weight(co, cl, kh, kw) * v;
            ++count;
          }
        }
      }
      out.at(n, co, oh, ow) = acc;
    }
  }
  macs->add(count);
}

}  // namespace detail

// Grouped 2-D convolution, stride 1, zero padding (K-1)/2.
//
// Per output element the accumulation order is fixed: bias, then input
// channels of the group in order, kernel rows, kernel columns. Zero-padding
// taps are skipped (they contribute exact zeros), which leaves finite
// results unchanged.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const ConvParams<Scalar>& p,
                      MacCounter* macs = nullptr) {
  detail::validate_conv(x, p);
  const Index N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const Index Co = p.out_channels(), K = p.kernel(), G = p.groups, pad = p.padding;
  const Index cig = C / G, cog = Co / G;
  Tensor<Scalar> out(N, Co, H, W);

  parallel_for(0, N * Co, [&](Index item) {
    const Index n = item / Co, co = item % Co;
    if (macs) {
      detail::conv2d_counting_plane(x, p, out, n, co, macs);
      return;
    }
    const Index g = co / cog;
    Scalar* op = out.data() + ((n * Co + co) * H) * W;
    const Scalar bias = p.bias.data()[co];
    for (Index i = 0; i < H * W; ++i) op[i] = bias;
    for (Index cl = 0; cl < cig; ++cl) {
      const Scalar* xp = x.data() + ((n * C + g * cig + cl) * H) * W;
      const Scalar* wp = p.weight.data() + ((co * cig + cl) * K) * K;
      for (Index kh = 0; kh < K; ++kh) {
        const Index dh = kh - pad;
        const Index oh0 = std::max<Index>(0, -dh), oh1 = std::min<Index>(H, H - dh);
        for (Index kw = 0; kw < K; ++kw) {
          const Scalar w = wp[kh * K + kw];
          const Index dw = kw - pad;
          const Index ow0 = std::max<Index>(0, -dw), ow1 = std::min<Index>(W, W - dw);
          for (Index oh = oh0; oh < oh1; ++oh) {
            Scalar* orow = op + oh * W;
            const Scalar* xrow = xp + (oh + dh) * W + dw;
            for (Index ow = ow0; ow < ow1; ++ow) orow[ow] += w * xrow[ow];
          }
        }
      }
    }
  });
  return out;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> x;
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

namespace detail {

// Strided four-way dot product. The stripe pattern is part of the fixed
// reduction order; it also breaks the add latency chain.
template <typename Scalar>
Scalar dot4(const Scalar* a, const Scalar* b, Index n) {
  Scalar s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  Index i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  Scalar tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace detail

// Exact gradients of conv2d under an upstream gradient.
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& x, const ConvParams<Scalar>& p,
                                  const Tensor<Scalar>& grad_out) {
  detail::validate_conv(x, p);
  const Index N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const Index Co = p.out_channels(), K = p.kernel(), G = p.groups, pad = p.padding;
  const Index cig = C / G, cog = Co / G;
  if (grad_out.n() != N || grad_out.c() != Co || grad_out.h() != H || grad_out.w() != W)
    throw ShapeError("conv2d_backward: grad_out shape (" + grad_out.shape_str() +
                     ") does not match output (" + std::to_string(N) + "," + std::to_string(Co) +
                     "," + std::to_string(H) + "," + std::to_string(W) + ")");

  ConvGrads<Scalar> grads;
  grads.x = Tensor<Scalar>(N, C, H, W);
  grads.weight = Tensor<Scalar>(Co, cig, K, K);
  grads.bias = Tensor<Scalar>(1, Co, 1, 1);

  // Weight and bias gradients: one worker item per output channel.
  parallel_for(0, Co, [&](Index co) {
    const Index g = co / cog;
    Scalar bacc = 0;
    for (Index n = 0; n < N; ++n) {
      const Scalar* gp = grad_out.data() + ((n * Co + co) * H) * W;
      for (Index i = 0; i < H * W; ++i) bacc += gp[i];
    }
    grads.bias.data()[co] = bacc;

    for (Index cl = 0; cl < cig; ++cl) {
      const Index ci = g * cig + cl;
      Scalar* wg = grads.weight.data() + ((co * cig + cl) * K) * K;
      for (Index kh = 0; kh < K; ++kh) {
        const Index dh = kh - pad;
        const Index oh0 = std::max<Index>(0, -dh), oh1 = std::min<Index>(H, H - dh);
        for (Index kw = 0; kw < K; ++kw) {
          const Index dw = kw - pad;
          const Index ow0 = std::max<Index>(0, -dw), ow1 = std::min<Index>(W, W - dw);
          Scalar acc = 0;
          for (Index n = 0; n < N; ++n) {
            const Scalar* gp = grad_out.data() + ((n * Co + co) * H) * W;
            const Scalar* xp = x.data() + ((n * C + ci) * H) * W;
            for (Index oh = oh0; oh < oh1; ++oh)
              acc += detail::dot4(gp + oh * W + ow0, xp + (oh + dh) * W + dw + ow0, ow1 - ow0);
          }
          wg[kh * K + kw] = acc;
        }
      }
    }
  });

  // Input gradient: one worker item per (n, ci) plane.
  parallel_for(0, N * C, [&](Index item) {
    const Index n = item / C, ci = item % C;
    const Index g = ci / cig, cl = ci % cig;
    Scalar* gx = grads.x.data() + ((n * C + ci) * H) * W;
    for (Index col = 0; col < cog; ++col) {
      const Index co = g * cog + col;
      const Scalar* wp = p.weight.data() + ((co * cig + cl) * K) * K;
      const Scalar* gp = grad_out.data() + ((n * Co + co) * H) * W;
      for (Index kh = 0; kh < K; ++kh) {
        const Index dh = kh - pad;
        const Index ih0 = std::max<Index>(0, dh), ih1 = std::min<Index>(H, H + dh);
        for (Index kw = 0; kw < K; ++kw) {
          const Scalar w = wp[kh * K + kw];
          const Index dw = kw - pad;
          const Index iw0 = std::max<Index>(0, dw), iw1 = std::min<Index>(W, W + dw);
          for (Index ih = ih0; ih < ih1; ++ih) {
            Scalar* gxrow = gx + ih * W;
            const Scalar* grow = gp + (ih - dh) * W - dw;
            for (Index iw = iw0; iw < iw1; ++iw) gxrow[iw] += w * grow[iw];
          }
        }
      }
    }
  });

  return grads;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.n(), x.c(), x.h(), x.w());
  out.flat() = x.flat().max(Scalar(0));
  return out;
}

// Masks where the forward input was <= 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor<Scalar> out(x.n(), x.c(), x.h(), x.w());
  const Scalar* xp = x.data();
  const Scalar* gp = grad_out.data();
  Scalar* op = out.data();
  for (Index i = 0, n = x.size(); i < n; ++i) op[i] = xp[i] > Scalar(0) ? gp[i] : Scalar(0);
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.n(), a.c(), a.h(), a.w());
  out.flat() = a.flat() + b.flat();
  return out;
}

// Channel concatenation; all inputs must share N, H, W.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& ts) {
  if (ts.empty()) throw ShapeError("concat_channels: empty input list");
  const Index N = ts[0].n(), H = ts[0].h(), W = ts[0].w();
  Index C = 0;
  for (const auto& t : ts) {
    if (t.n() != N || t.h() != H || t.w() != W)
      throw ShapeError("concat_channels: mismatched N/H/W in (" + t.shape_str() + ") vs (" +
                       ts[0].shape_str() + ")");
    C += t.c();
  }
  Tensor<Scalar> out(N, C, H, W);
  const Index plane = H * W;
  for (Index n = 0; n < N; ++n) {
    Scalar* op = out.data() + n * C * plane;
    for (const auto& t : ts) {
      const Index tc = t.c();
      std::copy_n(t.data() + n * tc * plane, tc * plane, op);
      op += tc * plane;
    }
  }
  return out;
}

// Inverse of concat_channels for the given channel sizes.
template <typename Scalar>
std::vector<Tensor<Scalar>> split_channels(const Tensor<Scalar>& x, const std::vector<Index>& sizes) {
  Index total = 0;
  for (Index s : sizes) total += s;
  if (total != x.c())
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + ", tensor has " +
                     std::to_string(x.c()) + " channels");
  std::vector<Tensor<Scalar>> out;
  const Index N = x.n(), H = x.h(), W = x.w(), plane = H * W;
  Index off = 0;
  for (Index s : sizes) {
    Tensor<Scalar> t(N, s, H, W);
    for (Index n = 0; n < N; ++n)
      std::copy_n(x.data() + (n * x.c() + off) * plane, s * plane, t.data() + n * s * plane);
    out.push_back(std::move(t));
    off += s;
  }
  return out;
}

// Sub-pixel rearrangement: (N, C, H, W) -> (N, C/r^2, H*r, W*r) with
// out(n, c, h*r+i, w*r+j) = in(n, c*r^2 + i*r + j, h, w).
template <typename Scalar>
Tensor<Scalar> pixel_shuffle(const Tensor<Scalar>& x, int r) {
  if (r < 1) throw ShapeError("pixel_shuffle: factor must be >= 1");
  const Index r2 = Index(r) * r;
  if (x.c() % r2 != 0)
    throw ShapeError("pixel_shuffle: channels " + std::to_string(x.c()) +
                     " not divisible by r^2 = " + std::to_string(r2));
  const Index N = x.n(), C = x.c() / r2, H = x.h(), W = x.w();
  Tensor<Scalar> out(N, C, H * r, W * r);
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < r; ++j) {
          const Scalar* ip = x.data() + ((n * x.c() + c * r2 + i * r + j) * H) * W;
          for (Index h = 0; h < H; ++h) {
            Scalar* op = out.data() + ((n * C + c) * H * r + h * r + i) * (W * r) + j;
            for (Index w = 0; w < W; ++w) op[w * r] = ip[h * W + w];
          }
        }
  return out;
}

// Exact inverse of pixel_shuffle; also its backward mapping.
template <typename Scalar>
Tensor<Scalar> pixel_unshuffle(const Tensor<Scalar>& x, int r) {
  if (r < 1) throw ShapeError("pixel_unshuffle: factor must be >= 1");
  if (x.h() % r != 0 || x.w() % r != 0)
    throw ShapeError("pixel_unshuffle: spatial dims (" + x.shape_str() +
                     ") not divisible by r = " + std::to_string(r));
  const Index r2 = Index(r) * r;
  const Index N = x.n(), C = x.c(), H = x.h() / r, W = x.w() / r;
  Tensor<Scalar> out(N, C * r2, H, W);
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < r; ++j) {
          Scalar* op = out.data() + ((n * C * r2 + c * r2 + i * r + j) * H) * W;
          for (Index h = 0; h < H; ++h) {
            const Scalar* ip = x.data() + ((n * C + c) * x.h() + h * r + i) * x.w() + j;
            for (Index w = 0; w < W; ++w) op[h * W + w] = ip[w * r];
          }
        }
  return out;
}

}  // namespace srkit
