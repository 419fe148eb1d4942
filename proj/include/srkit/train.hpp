#pragma once

// Training loop: random LR patch sampling with flip/rotation augmentation,
// one scale per batch, L1 loss, bias-corrected Adam, and a step-halving
// learning-rate schedule. Given a seed, the whole run is bitwise
// reproducible, including across thread counts, and can be resumed
// bit-exactly from a saved session.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "srkit/checkpoint.hpp"
#include "srkit/dataset.hpp"
#include "srkit/network.hpp"
#include "srkit/ops.hpp"
#include "srkit/rng.hpp"

namespace srkit {

struct TrainConfig {
  int patch_size_lr = 64;
  int batch_size = 64;
  double lr0 = 1e-4;
  std::int64_t halve_every = 400000;
  std::int64_t total_steps = 600000;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::vector<int> scales = {2, 3, 4};
  std::uint64_t seed = 0;
  bool augment = true;
  std::int64_t checkpoint_every = 0;  // 0 = only at the end
  std::int64_t log_every = 1;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.patch_size_lr < 1 || cfg.batch_size < 1 || cfg.lr0 <= 0 || cfg.halve_every < 1 ||
      cfg.total_steps < 1 || cfg.beta1 <= 0 || cfg.beta1 >= 1 || cfg.beta2 <= 0 ||
      cfg.beta2 >= 1 || cfg.epsilon <= 0 || cfg.log_every < 1 || cfg.checkpoint_every < 0)
    throw UsageError("train config: all hyperparameters must be positive (betas in (0,1))");
  if (cfg.scales.empty()) throw UsageError("train config: at least one scale required");
}

// Learning rate applied at (1-based) step t: lr0 halves every `halve_every`
// steps, i.e. lr0 * 2^-floor(t / halve_every), computed exactly.
inline double learning_rate_at(const TrainConfig& cfg, std::int64_t t) {
  return std::ldexp(cfg.lr0, -static_cast<int>(t / cfg.halve_every));
}

// ---------------------------------------------------------------------------
// Data

template <typename Scalar>
struct TrainItem {
  Tensor<Scalar> lr, hr;  // (1,3,h,w) and (1,3,h*s,w*s), values in [0,1]
};

template <typename Scalar>
struct TrainSet {
  std::map<int, std::vector<TrainItem<Scalar>>> by_scale;
};

template <typename Scalar>
TrainSet<Scalar> make_train_set(const std::vector<SrImage>& images,
                                const std::vector<int>& scales) {
  if (images.empty()) throw DataError("train set: no images");
  TrainSet<Scalar> set;
  for (int s : scales)
    for (const auto& im : images) {
      const SrPair pair = make_sr_pair(im.hr, s);
      set.by_scale[s].push_back({to_tensor<Scalar>(pair.lr), to_tensor<Scalar>(pair.hr)});
    }
  return set;
}

namespace detail {

// Horizontal flip, then `rot` clockwise quarter turns, applied to every
// channel of sample b. Patches are square so the transforms stay in-place.
template <typename Scalar>
void flip_rot_sample(Tensor<Scalar>& t, Index b, int flip, int rot) {
  const Index p = t.h();
  std::vector<Scalar> tmp(static_cast<size_t>(p) * p);
  for (Index c = 0; c < t.c(); ++c) {
    Scalar* plane = t.data() + ((b * t.c() + c) * p) * p;
    if (flip) {
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) tmp[i * p + j] = plane[i * p + (p - 1 - j)];
      std::copy(tmp.begin(), tmp.end(), plane);
    }
    for (int r = 0; r < rot; ++r) {
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) tmp[i * p + j] = plane[(p - 1 - j) * p + i];
      std::copy(tmp.begin(), tmp.end(), plane);
    }
  }
}

}  // namespace detail

// Draws one batch at one scale. Per sample the rng is consumed in a fixed
// order: image index, row, column, flip, rotation (the last two only when
// augmenting). The HR patch corner is (row*s, col*s).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> sample_batch(const TrainSet<Scalar>& data, int scale,
                                                       const TrainConfig& cfg, Rng& rng) {
  auto it = data.by_scale.find(scale);
  if (it == data.by_scale.end() || it->second.empty())
    throw DataError("sample_batch: no items for scale " + std::to_string(scale));
  const auto& items = it->second;
  const Index p = cfg.patch_size_lr;
  const Index P = p * scale;
  Tensor<Scalar> lr(cfg.batch_size, 3, p, p);
  Tensor<Scalar> hr(cfg.batch_size, 3, P, P);

  for (Index b = 0; b < cfg.batch_size; ++b) {
    const auto& item = items[rng.uniform_int(items.size())];
    if (item.lr.h() < p || item.lr.w() < p)
      throw DataError("sample_batch: image (" + item.lr.shape_str() + ") smaller than patch " +
                      std::to_string(p));
    const Index y = static_cast<Index>(rng.uniform_int(item.lr.h() - p + 1));
    const Index x = static_cast<Index>(rng.uniform_int(item.lr.w() - p + 1));
    const int flip = cfg.augment ? static_cast<int>(rng.uniform_int(2)) : 0;
    const int rot = cfg.augment ? static_cast<int>(rng.uniform_int(4)) : 0;

    for (Index c = 0; c < 3; ++c) {
      for (Index i = 0; i < p; ++i)
        std::copy_n(item.lr.data() + ((0 * 3 + c) * item.lr.h() + y + i) * item.lr.w() + x, p,
                    lr.data() + ((b * 3 + c) * p + i) * p);
      for (Index i = 0; i < P; ++i)
        std::copy_n(
            item.hr.data() + ((0 * 3 + c) * item.hr.h() + y * scale + i) * item.hr.w() + x * scale,
            P, hr.data() + ((b * 3 + c) * P + i) * P);
    }
    if (flip || rot) {
      detail::flip_rot_sample(lr, b, flip, rot);
      detail::flip_rot_sample(hr, b, flip, rot);
    }
  }
  return {std::move(lr), std::move(hr)};
}

// ---------------------------------------------------------------------------
// Loss and optimizer

// Mean absolute error and its (sub)gradient sign(pred - target)/count, with
// sign(0) = 0.
template <typename Scalar>
std::pair<double, Tensor<Scalar>> l1_loss(const Tensor<Scalar>& pred,
                                          const Tensor<Scalar>& target) {
  require_same_shape(pred, target, "l1_loss");
  Tensor<Scalar> grad(pred.n(), pred.c(), pred.h(), pred.w());
  double loss = 0;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(pred.size());
  for (Index i = 0; i < pred.size(); ++i) {
    const Scalar d = pred.data()[i] - target.data()[i];
    loss += std::abs(double(d));
    grad.data()[i] = d > Scalar(0) ? inv : d < Scalar(0) ? -inv : Scalar(0);
  }
  return {loss / double(pred.size()), std::move(grad)};
}

template <typename Scalar>
struct AdamState {
  std::vector<Tensor<Scalar>> m, v;  // aligned with the store's entries
  std::int64_t t = 0;

  static AdamState init(const ParamStore<Scalar>& store) {
    AdamState st;
    for (const auto& e : store.entries()) {
      st.m.push_back(Tensor<Scalar>(e.value.n(), e.value.c(), e.value.h(), e.value.w()));
      st.v.push_back(Tensor<Scalar>(e.value.n(), e.value.c(), e.value.h(), e.value.w()));
    }
    return st;
  }
};

// One bias-corrected Adam update over every canonical parameter.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& store, const Gradients<Scalar>& grads, AdamState<Scalar>& state,
               const TrainConfig& cfg) {
  if (grads.by_entry.size() != store.entries().size() || state.m.size() != store.entries().size())
    throw DataError("adam_step: gradient/state not aligned with the store");
  state.t += 1;
  const double lr = learning_rate_at(cfg, state.t);
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, double(state.t)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, double(state.t)));
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  const Scalar step = static_cast<Scalar>(lr);

  for (size_t i = 0; i < store.entries().size(); ++i) {
    auto th = store.entries()[i].value.flat();
    auto g = grads.by_entry[i].flat();
    auto m = state.m[i].flat();
    auto v = state.v[i].flat();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    th -= step * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Training session

template <typename Scalar>
struct TrainSession {
  Network<Scalar> net;
  AdamState<Scalar> adam;
  Rng rng;
  std::int64_t next_step = 1;

  static TrainSession start(Network<Scalar> network, const TrainConfig& cfg) {
    TrainSession s{std::move(network), {}, Rng(cfg.seed), 1};
    s.adam = AdamState<Scalar>::init(s.net.store);
    return s;
  }
};

// Bit-exact optimizer/rng sidecar so an interrupted run can continue as if
// it never stopped. Layout: magic "CRNS", version u32, step counter u64,
// next step u64, rng state (u32 length + text), entry count u32, then per
// entry the m and v payloads as little-endian f32.
inline constexpr std::uint32_t kTrainStateVersion = 1;

template <typename Scalar>
std::string train_state_bytes(const TrainSession<Scalar>& s) {
  std::string out = "CRNS";
  detail::put_u32(out, kTrainStateVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(s.adam.t & 0xffffffff));
  detail::put_u32(out, static_cast<std::uint32_t>(s.adam.t >> 32));
  detail::put_u32(out, static_cast<std::uint32_t>(s.next_step & 0xffffffff));
  detail::put_u32(out, static_cast<std::uint32_t>(s.next_step >> 32));
  const std::string rng = s.rng.serialize();
  detail::put_u32(out, static_cast<std::uint32_t>(rng.size()));
  out += rng;
  detail::put_u32(out, static_cast<std::uint32_t>(s.adam.m.size()));
  for (size_t i = 0; i < s.adam.m.size(); ++i) {
    for (Index j = 0; j < s.adam.m[i].size(); ++j)
      detail::put_f32(out, static_cast<float>(s.adam.m[i].data()[j]));
    for (Index j = 0; j < s.adam.v[i].size(); ++j)
      detail::put_f32(out, static_cast<float>(s.adam.v[i].data()[j]));
  }
  return out;
}

template <typename Scalar>
void save_train_state(const TrainSession<Scalar>& s, const std::string& path) {
  detail::write_file_bytes(path, train_state_bytes(s), "train state");
}

template <typename Scalar>
void load_train_state(TrainSession<Scalar>& s, const std::string& path) {
  const std::string buf = detail::read_file_bytes(path, "train state");
  detail::ByteReader r(buf, "train state");
  if (r.str(4) != "CRNS") throw DataError("train state: bad magic in '" + path + "'");
  if (r.u32() != kTrainStateVersion) throw DataError("train state: unsupported version");
  const std::uint64_t tl = r.u32(), th = r.u32();
  s.adam.t = static_cast<std::int64_t>(tl | (th << 32));
  const std::uint64_t nl = r.u32(), nh = r.u32();
  s.next_step = static_cast<std::int64_t>(nl | (nh << 32));
  s.rng.deserialize(r.str(r.u32()));
  if (r.u32() != s.adam.m.size()) throw DataError("train state: entry count mismatch");
  for (size_t i = 0; i < s.adam.m.size(); ++i) {
    for (Index j = 0; j < s.adam.m[i].size(); ++j)
      s.adam.m[i].data()[j] = static_cast<Scalar>(r.f32());
    for (Index j = 0; j < s.adam.v[i].size(); ++j)
      s.adam.v[i].data()[j] = static_cast<Scalar>(r.f32());
  }
  if (!r.at_end()) throw DataError("train state: trailing bytes in '" + path + "'");
}

namespace detail {

// Names the first non-finite value on the tape, in production order.
template <typename Scalar>
std::string first_non_finite(const Tape<Scalar>& tape) {
  for (const auto& n : tape.nodes()) {
    if (all_finite(tape.values()[n.out])) continue;
    using Op = typename Tape<Scalar>::Node::Op;
    switch (n.op) {
      case Op::Conv: return "conv '" + n.use_name + "'";
      case Op::Relu: return "relu";
      case Op::Add: return "residual add";
      case Op::Concat: return "concat";
      case Op::Shuffle: return "pixel shuffle";
    }
  }
  return "loss reduction";
}

}  // namespace detail

// Runs steps [session.next_step, cfg.total_steps]. Per step: pick a scale
// uniformly at random, sample an augmented batch, forward, L1 loss,
// backward, Adam. Appends CSV rows (step,scale,loss,lr,seconds) to *log and
// invokes `sink` at every checkpoint cadence and at the end.
template <typename Scalar>
void train(TrainSession<Scalar>& session, const TrainSet<Scalar>& data, const TrainConfig& cfg,
           std::string* log,
           const std::function<void(const TrainSession<Scalar>&, std::int64_t, bool)>& sink = {}) {
  validate(cfg);
  for (int s : cfg.scales) {
    if (!session.net.supports_scale(s))
      throw UsageError("train: scale " + std::to_string(s) + " not supported by the network");
    auto it = data.by_scale.find(s);
    if (it == data.by_scale.end() || it->second.empty())
      throw DataError("train: dataset has no items for scale " + std::to_string(s));
    for (const auto& item : it->second)
      if (item.lr.h() < cfg.patch_size_lr || item.lr.w() < cfg.patch_size_lr)
        throw DataError("train: image (" + item.lr.shape_str() + ") smaller than the " +
                        std::to_string(cfg.patch_size_lr) + "px LR patch at scale " +
                        std::to_string(s));
  }
  if (log && log->empty()) *log = "step,scale,loss,lr,seconds\n";

  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t step = session.next_step; step <= cfg.total_steps; ++step) {
    const int scale = cfg.scales[session.rng.uniform_int(cfg.scales.size())];
    auto [lr_batch, hr_batch] = sample_batch(data, scale, cfg, session.rng);

    Tape<Scalar> tape;
    Tensor<Scalar> pred = session.net.forward(lr_batch, scale, &tape);
    auto [loss, grad] = l1_loss(pred, hr_batch);
    if (!std::isfinite(loss))
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         "; first bad layer: " + detail::first_non_finite(tape));
    auto grads = session.net.backward(tape, grad);
    adam_step(session.net.store, grads, session.adam, cfg);
    session.next_step = step + 1;

    if (log && (step % cfg.log_every == 0 || step == cfg.total_steps || step == 1)) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char row[160];
      std::snprintf(row, sizeof(row), "%lld,%d,%.8f,%.10g,%.3f\n",
                    static_cast<long long>(step), scale, loss, learning_rate_at(cfg, step), secs);
      *log += row;
    }
    if (sink && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
        step != cfg.total_steps)
      sink(session, step, false);
  }
  if (sink) sink(session, cfg.total_steps, true);
}

}  // namespace srkit
