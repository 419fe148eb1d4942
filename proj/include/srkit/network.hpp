#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srkit/ops.hpp"
#include "srkit/rng.hpp"
#include "srkit/tensor.hpp"

namespace srkit {

// Structural description of a network variant. Named presets pin the flags;
// "custom" exposes all of them (used by the efficiency sweep).
struct NetworkSpec {
  std::string variant = "carn";
  int blocks = 3;          // cascading blocks (B)
  int units = 3;           // residual units per block (U)
  int channels = 64;
  int group_size = 1;      // G for the grouped convs of efficient units
  bool eblock = false;     // efficient residual units (grouped 3x3 + pointwise)
  bool recursive = false;  // share unit parameters across blocks
  std::vector<int> scales = {2, 3, 4};
  bool local_cascading = true;
  bool global_cascading = true;
};

inline NetworkSpec make_network_spec(const std::string& variant) {
  NetworkSpec s;
  s.variant = variant;
  if (variant == "carn") {
    // defaults
  } else if (variant == "baseline") {
    s.local_cascading = false;
    s.global_cascading = false;
  } else if (variant == "carn-nl") {
    s.local_cascading = false;
  } else if (variant == "carn-ng") {
    s.global_cascading = false;
  } else if (variant == "carn-m") {
    s.eblock = true;
    s.group_size = 4;
    s.recursive = true;
  } else if (variant == "custom") {
    // caller fills in the flags
  } else {
    throw UsageError("unknown variant '" + variant + "'");
  }
  return s;
}

inline void validate(const NetworkSpec& s) {
  if (s.blocks < 1 || s.units < 1 || s.channels < 1 || s.group_size < 1)
    throw UsageError("network spec: blocks/units/channels/group_size must be positive");
  if (s.channels % s.group_size != 0)
    throw UsageError("network spec: channels " + std::to_string(s.channels) +
                     " not divisible by group_size " + std::to_string(s.group_size));
  if (s.scales.empty()) throw UsageError("network spec: at least one scale required");
  for (size_t i = 0; i < s.scales.size(); ++i) {
    const int sc = s.scales[i];
    if (sc < 2 || sc > 4) throw UsageError("network spec: unsupported scale " + std::to_string(sc));
    if (i > 0 && s.scales[i] <= s.scales[i - 1])
      throw UsageError("network spec: scales must be strictly increasing");
  }
  if (s.variant != "custom") {
    NetworkSpec preset = make_network_spec(s.variant);  // throws on unknown names
    if (s.local_cascading != preset.local_cascading ||
        s.global_cascading != preset.global_cascading || s.eblock != preset.eblock ||
        s.recursive != preset.recursive ||
        (s.variant == "carn-m" ? s.group_size != 4 : s.group_size != 1))
      throw UsageError("network spec: flags conflict with the '" + s.variant +
                       "' preset; use variant=custom to override");
  }
  if (!s.eblock && s.group_size != 1)
    throw UsageError("network spec: group_size > 1 requires eblock=true");
}

enum class LayerKind { Entry, Unit, LocalFusion, GlobalFusion, Head, Exit };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Entry: return "entry";
    case LayerKind::Unit: return "unit";
    case LayerKind::LocalFusion: return "local_fusion";
    case LayerKind::GlobalFusion: return "global_fusion";
    case LayerKind::Head: return "head";
    case LayerKind::Exit: return "exit";
  }
  return "?";
}

// One convolution site in the graph. `use_name` identifies the site;
// `param_name` identifies the canonical parameters (different only under
// recursive sharing). `px_factor` is the multiplier on the LR pixel count at
// which this conv executes (the second stage of the x4 head runs at 4x the
// LR pixel count); the exit conv runs at scale^2 (resolved by the cost
// model, which knows the active scale).
struct ConvLayerInfo {
  std::string use_name;
  std::string param_name;
  Index cin = 0, cout = 0, k = 0;
  int groups = 1;
  LayerKind kind = LayerKind::Entry;
  int head_scale = 0;  // nonzero only for head convs
  int px_factor = 1;
};

// The canonical layer inventory, in build/init/serialization order.
inline std::vector<ConvLayerInfo> conv_layers(const NetworkSpec& s) {
  validate(s);
  std::vector<ConvLayerInfo> out;
  const Index C = s.channels;
  auto push = [&](std::string use, std::string param, Index cin, Index cout, Index k, int groups,
                  LayerKind kind, int head_scale = 0, int px = 1) {
    out.push_back({std::move(use), std::move(param), cin, cout, k, groups, kind, head_scale, px});
  };

  push("entry", "entry", 3, C, 3, 1, LayerKind::Entry);

  for (int b = 0; b < s.blocks; ++b) {
    const std::string bp = "b" + std::to_string(b) + ".";
    for (int u = 0; u < s.units; ++u) {
      const std::string up = "u" + std::to_string(u) + ".";
      const std::string canon = s.recursive ? "shared." + up : bp + up;
      if (s.eblock) {
        push(bp + up + "conv0", canon + "conv0", C, C, 3, s.group_size, LayerKind::Unit);
        push(bp + up + "conv1", canon + "conv1", C, C, 3, s.group_size, LayerKind::Unit);
        push(bp + up + "pw", canon + "pw", C, C, 1, 1, LayerKind::Unit);
      } else {
        push(bp + up + "conv0", canon + "conv0", C, C, 3, 1, LayerKind::Unit);
        push(bp + up + "conv1", canon + "conv1", C, C, 3, 1, LayerKind::Unit);
      }
      if (s.local_cascading) {
        const std::string f = bp + "fuse" + std::to_string(u);
        push(f, f, C * (u + 2), C, 1, 1, LayerKind::LocalFusion);
      }
    }
  }

  if (s.global_cascading)
    for (int b = 0; b < s.blocks; ++b) {
      const std::string f = "global.fuse" + std::to_string(b);
      push(f, f, C * (b + 2), C, 1, 1, LayerKind::GlobalFusion);
    }

  // Upsample heads: sub-pixel convs; x4 is two chained x2 stages. Efficient
  // variants group the head convs too.
  const int hg = s.eblock ? s.group_size : 1;
  for (int sc : s.scales) {
    if (sc == 2) {
      push("head.x2.conv", "head.x2.conv", C, C * 4, 3, hg, LayerKind::Head, 2);
    } else if (sc == 3) {
      push("head.x3.conv", "head.x3.conv", C, C * 9, 3, hg, LayerKind::Head, 3);
    } else {
      push("head.x4.stage0", "head.x4.stage0", C, C * 4, 3, hg, LayerKind::Head, 4, 1);
      push("head.x4.stage1", "head.x4.stage1", C, C * 4, 3, hg, LayerKind::Head, 4, 4);
    }
  }

  push("exit", "exit", C, 3, 3, 1, LayerKind::Exit);
  return out;
}

// ---------------------------------------------------------------------------
// Parameter storage

template <typename Scalar>
struct ParamEntry {
  std::string name;
  Tensor<Scalar> value;
  int rank = 4;       // 4 = conv weight (Cout, Cin/G, K, K); 1 = bias (length Cout)
  Index fan_in = 0;   // input channel count of the owning layer (drives init)
};

// Ordered named tensors plus an alias table realizing parameter sharing.
// Aliased names resolve to a canonical entry; counts cover canonical entries
// only.
template <typename Scalar>
class ParamStore {
 public:
  size_t add(std::string name, Tensor<Scalar> value, int rank, Index fan_in) {
    if (index_.count(name)) throw DataError("param store: duplicate entry '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(value), rank, fan_in});
    return entries_.size() - 1;
  }

  void add_alias(const std::string& alias, const std::string& canonical) {
    if (!index_.count(canonical))
      throw DataError("param store: alias '" + alias + "' to unknown entry '" + canonical + "'");
    if (index_.count(alias) || aliases_.count(alias))
      throw DataError("param store: alias '" + alias + "' collides with an existing name");
    aliases_[alias] = canonical;
  }

  // Canonical entry index for a (possibly aliased) name.
  size_t index_of(const std::string& name) const {
    auto a = aliases_.find(name);
    const std::string& canon = a == aliases_.end() ? name : a->second;
    auto it = index_.find(canon);
    if (it == index_.end()) throw DataError("param store: unknown entry '" + name + "'");
    return it->second;
  }

  bool has(const std::string& name) const {
    return index_.count(name) > 0 || aliases_.count(name) > 0;
  }

  Tensor<Scalar>& value(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor<Scalar>& value(const std::string& name) const {
    return entries_[index_of(name)].value;
  }

  std::vector<ParamEntry<Scalar>>& entries() { return entries_; }
  const std::vector<ParamEntry<Scalar>>& entries() const { return entries_; }
  const std::map<std::string, std::string>& aliases() const { return aliases_; }

  // Total scalar count over canonical entries (each shared tensor once).
  std::uint64_t param_count() const {
    std::uint64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::uint64_t>(e.value.size());
    return n;
  }

 private:
  std::vector<ParamEntry<Scalar>> entries_;
  std::unordered_map<std::string, size_t> index_;
  std::map<std::string, std::string> aliases_;
};

// Uniform init on (-k, k), k = 1/sqrt(layer input channels), walking entries
// in insertion order so a seed pins every value.
template <typename Scalar>
void init_weights(ParamStore<Scalar>& store, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : store.entries()) {
    const double k = 1.0 / std::sqrt(static_cast<double>(e.fan_in));
    for (Index i = 0; i < e.value.size(); ++i)
      e.value.data()[i] = static_cast<Scalar>(rng.uniform(-k, k));
  }
}

// ---------------------------------------------------------------------------
// Forward tape and gradients

// Gradient tensors aligned 1:1 with the store's canonical entries; shared
// parameters therefore accumulate over all their uses.
template <typename Scalar>
struct Gradients {
  std::vector<Tensor<Scalar>> by_entry;
};

// Record of one forward pass: produced values plus the op sequence, enough
// to run the exact reverse pass.
template <typename Scalar>
class Tape {
 public:
  struct Node {
    enum class Op { Conv, Relu, Add, Concat, Shuffle } op;
    int out = -1;
    int in0 = -1, in1 = -1;
    std::vector<int> ins;        // concat inputs
    std::vector<Index> sizes;    // concat channel sizes
    std::string use_name;        // conv site
    int r = 0;                   // shuffle factor
  };

  int register_value(const Tensor<Scalar>& t) {
    auto it = ids_.find(t.data());
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(vals_.size());
    ids_[t.data()] = id;
    vals_.push_back(t);
    return id;
  }

  int id_of(const Tensor<Scalar>& t) const {
    auto it = ids_.find(t.data());
    if (it == ids_.end()) throw DataError("tape: value was not produced on this tape");
    return it->second;
  }

  const std::vector<Tensor<Scalar>>& values() const { return vals_; }
  std::vector<Node>& nodes() { return nodes_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  int output = -1;

 private:
  std::vector<Tensor<Scalar>> vals_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> ids_;
};

// ---------------------------------------------------------------------------
// Free building blocks (compositions of tensor-core ops)

template <typename Scalar>
Tensor<Scalar> residual_block(const Tensor<Scalar>& x, const ConvParams<Scalar>& c0,
                              const ConvParams<Scalar>& c1) {
  return relu(add(conv2d(relu(conv2d(x, c0)), c1), x));
}

template <typename Scalar>
Tensor<Scalar> residual_e_block(const Tensor<Scalar>& x, const ConvParams<Scalar>& g0,
                                const ConvParams<Scalar>& g1, const ConvParams<Scalar>& pw) {
  return relu(add(conv2d(relu(conv2d(relu(conv2d(x, g0)), g1)), pw), x));
}

template <typename Scalar>
struct UnitParams {
  bool eblock = false;
  ConvParams<Scalar> conv0, conv1;
  ConvParams<Scalar> pw;  // only when eblock
};

template <typename Scalar>
Tensor<Scalar> apply_unit(const Tensor<Scalar>& x, const UnitParams<Scalar>& u) {
  return u.eblock ? residual_e_block(x, u.conv0, u.conv1, u.pw)
                  : residual_block(x, u.conv0, u.conv1);
}

// One cascading block: residual units plus concatenate-and-fuse after every
// unit. With no fusions this degenerates to a plain chain of units.
template <typename Scalar>
Tensor<Scalar> local_cascade(const Tensor<Scalar>& x, const std::vector<UnitParams<Scalar>>& units,
                             const std::vector<ConvParams<Scalar>>& fusions) {
  if (!fusions.empty() && fusions.size() != units.size())
    throw ShapeError("local_cascade: fusion count must match unit count");
  std::vector<Tensor<Scalar>> states = {x};
  Tensor<Scalar> cur = x;
  for (size_t u = 0; u < units.size(); ++u) {
    Tensor<Scalar> r = apply_unit(cur, units[u]);
    if (fusions.empty()) {
      cur = r;
    } else {
      std::vector<Tensor<Scalar>> cat = states;
      cat.push_back(r);
      cur = conv2d(concat_channels(cat), fusions[u]);
      states.push_back(cur);
    }
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Network

template <typename Scalar>
class Network {
 public:
  NetworkSpec spec;
  ParamStore<Scalar> store;
  std::vector<ConvLayerInfo> layers;

  const ConvLayerInfo& layer(const std::string& use_name) const {
    auto it = layer_index_.find(use_name);
    if (it == layer_index_.end()) throw DataError("network: unknown layer '" + use_name + "'");
    return layers[it->second];
  }

  // Conv parameters for a site; tensors share the store's buffers.
  ConvParams<Scalar> conv_of(const std::string& use_name) const {
    const ConvLayerInfo& li = layer(use_name);
    ConvParams<Scalar> p;
    p.weight = store.value(li.param_name + ".w");
    p.bias = store.value(li.param_name + ".b");
    p.groups = li.groups;
    p.padding = static_cast<int>((li.k - 1) / 2);
    return p;
  }

  bool supports_scale(int scale) const {
    for (int s : spec.scales)
      if (s == scale) return true;
    return false;
  }

  // Full forward pass at one scale. When `tape` is given, every op is
  // recorded for backward(); `macs` counts multiply-accumulates exactly.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, int scale, Tape<Scalar>* tape = nullptr,
                         MacCounter* macs = nullptr) const {
    if (!supports_scale(scale))
      throw UsageError("network: scale " + std::to_string(scale) + " not in this spec");
    if (x.c() != 3) throw ShapeError("network: input must have 3 channels, got " + x.shape_str());

    auto rec = [&](typename Tape<Scalar>::Node n, const Tensor<Scalar>& out) {
      if (!tape) return;
      n.out = tape->register_value(out);
      tape->nodes().push_back(std::move(n));
    };
    auto conv = [&](const std::string& use, const Tensor<Scalar>& in) {
      Tensor<Scalar> out = conv2d(in, conv_of(use), macs);
      typename Tape<Scalar>::Node n;
      n.op = Tape<Scalar>::Node::Op::Conv;
      n.use_name = use;
      if (tape) n.in0 = tape->id_of(in);
      rec(std::move(n), out);
      return out;
    };
    auto act = [&](const Tensor<Scalar>& in) {
      Tensor<Scalar> out = relu(in);
      typename Tape<Scalar>::Node n;
      n.op = Tape<Scalar>::Node::Op::Relu;
      if (tape) n.in0 = tape->id_of(in);
      rec(std::move(n), out);
      return out;
    };
    auto sum = [&](const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
      Tensor<Scalar> out = add(a, b);
      typename Tape<Scalar>::Node n;
      n.op = Tape<Scalar>::Node::Op::Add;
      if (tape) {
        n.in0 = tape->id_of(a);
        n.in1 = tape->id_of(b);
      }
      rec(std::move(n), out);
      return out;
    };
    auto cat = [&](const std::vector<Tensor<Scalar>>& xs) {
      Tensor<Scalar> out = concat_channels(xs);
      typename Tape<Scalar>::Node n;
      n.op = Tape<Scalar>::Node::Op::Concat;
      if (tape)
        for (const auto& t : xs) {
          n.ins.push_back(tape->id_of(t));
          n.sizes.push_back(t.c());
        }
      rec(std::move(n), out);
      return out;
    };
    auto shuffle = [&](const Tensor<Scalar>& in, int r) {
      Tensor<Scalar> out = pixel_shuffle(in, r);
      typename Tape<Scalar>::Node n;
      n.op = Tape<Scalar>::Node::Op::Shuffle;
      n.r = r;
      if (tape) n.in0 = tape->id_of(in);
      rec(std::move(n), out);
      return out;
    };
    auto unit = [&](int b, int u, const Tensor<Scalar>& in) {
      const std::string p = "b" + std::to_string(b) + ".u" + std::to_string(u) + ".";
      if (spec.eblock) {
        Tensor<Scalar> t = act(conv(p + "conv0", in));
        t = act(conv(p + "conv1", t));
        t = conv(p + "pw", t);
        return act(sum(t, in));
      }
      Tensor<Scalar> t = act(conv(p + "conv0", in));
      t = conv(p + "conv1", t);
      return act(sum(t, in));
    };
    auto block = [&](int b, const Tensor<Scalar>& in) {
      std::vector<Tensor<Scalar>> states = {in};
      Tensor<Scalar> cur = in;
      for (int u = 0; u < spec.units; ++u) {
        Tensor<Scalar> r = unit(b, u, cur);
        if (!spec.local_cascading) {
          cur = r;
          continue;
        }
        std::vector<Tensor<Scalar>> inputs = states;
        inputs.push_back(r);
        cur = conv("b" + std::to_string(b) + ".fuse" + std::to_string(u), cat(inputs));
        states.push_back(cur);
      }
      return cur;
    };

    if (tape) tape->register_value(x);

    Tensor<Scalar> h = conv("entry", x);
    std::vector<Tensor<Scalar>> hidden = {h};
    for (int b = 0; b < spec.blocks; ++b) {
      Tensor<Scalar> r = block(b, h);
      if (spec.global_cascading) {
        std::vector<Tensor<Scalar>> inputs = hidden;
        inputs.push_back(r);
        h = conv("global.fuse" + std::to_string(b), cat(inputs));
        hidden.push_back(h);
      } else {
        h = r;
      }
    }

    Tensor<Scalar> up;
    if (scale == 2) {
      up = shuffle(conv("head.x2.conv", h), 2);
    } else if (scale == 3) {
      up = shuffle(conv("head.x3.conv", h), 3);
    } else {
      up = shuffle(conv("head.x4.stage0", h), 2);
      up = shuffle(conv("head.x4.stage1", up), 2);
    }
    Tensor<Scalar> out = conv("exit", up);
    if (tape) tape->output = tape->id_of(out);
    return out;
  }

  // Reverse pass over a recorded tape. Gradients for aliased (shared)
  // parameters accumulate across all uses; all accumulation orders are fixed
  // by the node sequence.
  Gradients<Scalar> backward(const Tape<Scalar>& tape, const Tensor<Scalar>& grad_out) const {
    Gradients<Scalar> grads;
    grads.by_entry.reserve(store.entries().size());
    for (const auto& e : store.entries())
      grads.by_entry.push_back(
          Tensor<Scalar>(e.value.n(), e.value.c(), e.value.h(), e.value.w()));

    std::vector<Tensor<Scalar>> vgrad(tape.values().size());
    auto accum = [&](int id, const Tensor<Scalar>& g) {
      if (vgrad[id].empty())
        vgrad[id] = g.clone();
      else
        vgrad[id].flat() += g.flat();
    };
    if (tape.output < 0) throw DataError("network backward: tape has no recorded output");
    require_same_shape(tape.values()[tape.output], grad_out, "network backward");
    accum(tape.output, grad_out);

    using Node = typename Tape<Scalar>::Node;
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
      const Node& n = *it;
      if (vgrad[n.out].empty()) continue;  // e.g. heads of inactive branches
      const Tensor<Scalar>& gy = vgrad[n.out];
      switch (n.op) {
        case Node::Op::Conv: {
          const ConvLayerInfo& li = layer(n.use_name);
          auto g = conv2d_backward(tape.values()[n.in0], conv_of(n.use_name), gy);
          accum(n.in0, g.x);
          grads.by_entry[store.index_of(li.param_name + ".w")].flat() += g.weight.flat();
          grads.by_entry[store.index_of(li.param_name + ".b")].flat() += g.bias.flat();
          break;
        }
        case Node::Op::Relu:
          accum(n.in0, relu_backward(tape.values()[n.in0], gy));
          break;
        case Node::Op::Add:
          accum(n.in0, gy);
          accum(n.in1, gy);
          break;
        case Node::Op::Concat: {
          auto parts = split_channels(gy, n.sizes);
          for (size_t i = 0; i < parts.size(); ++i) accum(n.ins[i], parts[i]);
          break;
        }
        case Node::Op::Shuffle:
          accum(n.in0, pixel_unshuffle(gy, n.r));
          break;
      }
    }
    return grads;
  }

  static Network build(const NetworkSpec& spec, std::uint64_t seed) {
    validate(spec);
    Network net;
    net.spec = spec;
    net.layers = conv_layers(spec);
    for (size_t i = 0; i < net.layers.size(); ++i) {
      const ConvLayerInfo& li = net.layers[i];
      net.layer_index_[li.use_name] = i;
      if (!net.store.has(li.param_name + ".w")) {
        net.store.add(li.param_name + ".w",
                      Tensor<Scalar>(li.cout, li.cin / li.groups, li.k, li.k), 4, li.cin);
        net.store.add(li.param_name + ".b", Tensor<Scalar>(1, li.cout, 1, 1), 1, li.cin);
      }
      if (li.use_name != li.param_name) {
        net.store.add_alias(li.use_name + ".w", li.param_name + ".w");
        net.store.add_alias(li.use_name + ".b", li.param_name + ".b");
      }
    }
    init_weights(net.store, seed);
    return net;
  }

 private:
  std::unordered_map<std::string, size_t> layer_index_;
};

template <typename Scalar>
Network<Scalar> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  return Network<Scalar>::build(spec, seed);
}

}  // namespace srkit
