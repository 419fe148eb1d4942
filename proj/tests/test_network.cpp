#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <vector>

#include "srkit/checkpoint.hpp"
#include "srkit/network.hpp"
#include "srkit/ops.hpp"
#include "support/oracles.hpp"

using srkit::ConvParams;
using srkit::Index;
using srkit::NetworkSpec;
using srkit::Rng;
using srkit::Tensor;

namespace {

NetworkSpec small_spec(bool eblock, int groups = 1, bool recursive = false) {
  NetworkSpec s = srkit::make_network_spec("custom");
  s.blocks = 2;
  s.units = 2;
  s.channels = 8;
  s.eblock = eblock;
  s.group_size = groups;
  s.recursive = recursive;
  return s;
}

}  // namespace

TEST_CASE("layer inventory for the default variant") {
  auto layers = srkit::conv_layers(srkit::make_network_spec("carn"));
  // entry + 9 units x 2 convs + 9 local fusions + 3 global fusions +
  // 4 head convs + exit
  CHECK(layers.size() == 1 + 18 + 9 + 3 + 4 + 1);

  auto find = [&](const std::string& name) -> const srkit::ConvLayerInfo& {
    for (const auto& li : layers)
      if (li.use_name == name) return li;
    throw std::runtime_error("missing layer " + name);
  };
  CHECK(find("entry").cin == 3);
  CHECK(find("entry").cout == 64);
  CHECK(find("b0.fuse0").cin == 128);
  CHECK(find("b0.fuse1").cin == 192);
  CHECK(find("b0.fuse2").cin == 256);
  CHECK(find("b0.fuse2").k == 1);
  CHECK(find("global.fuse0").cin == 128);
  CHECK(find("global.fuse2").cin == 256);
  CHECK(find("head.x2.conv").cout == 256);
  CHECK(find("head.x3.conv").cout == 576);
  CHECK(find("head.x4.stage1").px_factor == 4);
  CHECK(find("exit").cout == 3);
}

TEST_CASE("parameter counts hit the published totals") {
  auto count = [](const std::string& v) {
    return srkit::build_network<float>(srkit::make_network_spec(v), 1).store.param_count();
  };
  const std::uint64_t carn = count("carn");
  const std::uint64_t baseline = count("baseline");
  const std::uint64_t nl = count("carn-nl");
  const std::uint64_t ng = count("carn-ng");
  const std::uint64_t m = count("carn-m");

  CHECK(carn == 1591939);
  CHECK(baseline == 1443715);
  CHECK(nl == 1480771);
  CHECK(ng == 1554883);
  CHECK(m == 414787);

  // Cascading only adds the 1x1 fusion convs.
  std::uint64_t per_block = 0;
  for (int u = 1; u <= 3; ++u) per_block += 64ull * (u + 1) * 64 + 64;
  CHECK(ng - baseline == 3 * per_block);
  CHECK(nl - baseline == per_block);  // global widths match local widths when B == U
  CHECK(carn - baseline == 4 * per_block);
}

TEST_CASE("recursive sharing divides unit parameters by the block count") {
  NetworkSpec shared = srkit::make_network_spec("carn-m");
  NetworkSpec unshared = shared;
  unshared.variant = "custom";
  unshared.recursive = false;

  auto unit_params = [](const NetworkSpec& s) {
    auto net = srkit::build_network<float>(s, 1);
    std::uint64_t n = 0;
    for (const auto& e : net.store.entries())
      if (e.name.find(".u") != std::string::npos || e.name.rfind("shared.", 0) == 0)
        n += e.value.size();
    return n;
  };
  const std::uint64_t a = unit_params(shared), b = unit_params(unshared);
  CHECK(b == 3 * a);

  // Efficient-unit weight count at G=4 (weights only, biases excluded).
  auto net = srkit::build_network<float>(shared, 1);
  std::uint64_t unit0 = 0;
  for (const char* n : {"shared.u0.conv0.w", "shared.u0.conv1.w", "shared.u0.pw.w"})
    unit0 += net.store.value(n).size();
  CHECK(unit0 == 22528);
}

TEST_CASE("spec validation") {
  NetworkSpec s = srkit::make_network_spec("carn");
  s.local_cascading = false;  // conflicts with the preset
  CHECK_THROWS_AS(srkit::validate(s), srkit::UsageError);

  NetworkSpec c = srkit::make_network_spec("custom");
  c.channels = 30;
  c.eblock = true;
  c.group_size = 4;  // 30 % 4 != 0
  CHECK_THROWS_AS(srkit::validate(c), srkit::UsageError);

  NetworkSpec g = srkit::make_network_spec("custom");
  g.group_size = 2;  // plain blocks cannot be grouped
  CHECK_THROWS_AS(srkit::validate(g), srkit::UsageError);

  NetworkSpec sc = srkit::make_network_spec("carn");
  sc.scales = {5};
  CHECK_THROWS_AS(srkit::validate(sc), srkit::UsageError);
  CHECK_THROWS_AS(srkit::make_network_spec("resnet"), srkit::UsageError);
}

TEST_CASE("initialization bounds, symmetry, determinism") {
  auto net = srkit::build_network<float>(srkit::make_network_spec("carn"), 7);
  // 64-input-channel layer: k = 1/sqrt(64) = 0.125.
  const auto& w = net.store.value("b0.u0.conv0.w");
  double mean = 0;
  for (Index i = 0; i < w.size(); ++i) {
    CHECK(std::abs(w.data()[i]) < 0.125f);
    mean += w.data()[i];
  }
  // n = 36864 samples from U(-k, k): sd of the mean = k/sqrt(3n).
  const double sd_mean = 0.125 / std::sqrt(3.0 * w.size());
  CHECK(std::abs(mean / w.size()) < 3 * sd_mean);

  // Entry layer: k = 1/sqrt(3).
  const auto& we = net.store.value("entry.w");
  for (Index i = 0; i < we.size(); ++i) CHECK(std::abs(we.data()[i]) < 1.0 / std::sqrt(3.0));

  auto net2 = srkit::build_network<float>(srkit::make_network_spec("carn"), 7);
  auto net3 = srkit::build_network<float>(srkit::make_network_spec("carn"), 8);
  bool same = true, diff = false;
  for (size_t i = 0; i < net.store.entries().size(); ++i) {
    same = same && oracle::bitwise_equal(net.store.entries()[i].value, net2.store.entries()[i].value);
    diff = diff || !oracle::bitwise_equal(net.store.entries()[i].value, net3.store.entries()[i].value);
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("residual block zero-weight and zero-input degeneracies") {
  Rng rng(31);
  auto x = oracle::random_tensor<float>(rng, 1, 8, 5, 5);
  auto c0 = srkit::make_conv_params<float>(8, 8, 3);
  auto c1 = srkit::make_conv_params<float>(8, 8, 3);

  // All weights and biases zero: only the skip path survives.
  Tensor<float> y = srkit::residual_block(x, c0, c1);
  CHECK(oracle::bitwise_equal(y, srkit::relu(x)));

  // Zero input: pure bias path.
  oracle::fill_uniform(c0.weight, rng, -1, 1);
  oracle::fill_uniform(c0.bias, rng, -1, 1);
  oracle::fill_uniform(c1.weight, rng, -1, 1);
  oracle::fill_uniform(c1.bias, rng, -1, 1);
  Tensor<float> zero(1, 8, 5, 5);
  Tensor<float> yz = srkit::residual_block(zero, c0, c1);
  Tensor<float> expect = srkit::relu(srkit::conv2d(srkit::relu(srkit::conv2d(zero, c0)), c1));
  CHECK(oracle::bitwise_equal(yz, expect));
}

TEST_CASE("efficient block degeneracies") {
  Rng rng(32);
  // G=1 with identity pointwise equals a plain residual block when the
  // pre-addition path stays non-negative (so the extra activation is a
  // no-op): use non-negative weights and input.
  Tensor<float> x(1, 4, 5, 5);
  oracle::fill_uniform(x, rng, 0, 1);
  auto g0 = srkit::make_conv_params<float>(4, 4, 3);
  auto g1 = srkit::make_conv_params<float>(4, 4, 3);
  oracle::fill_uniform(g0.weight, rng, 0, 0.5);
  oracle::fill_uniform(g0.bias, rng, 0, 0.1);
  oracle::fill_uniform(g1.weight, rng, 0, 0.5);
  oracle::fill_uniform(g1.bias, rng, 0, 0.1);
  auto pw = srkit::make_conv_params<float>(4, 4, 1);
  for (Index c = 0; c < 4; ++c) pw.weight.at(c, c, 0, 0) = 1.0f;

  Tensor<float> a = srkit::residual_e_block(x, g0, g1, pw);
  Tensor<float> b = srkit::residual_block(x, g0, g1);
  CHECK(oracle::max_abs_diff(a, b) == 0.0);

  // Depthwise limit: G = channels means each output channel convolves only
  // its own input channel.
  auto dw = srkit::make_conv_params<float>(4, 4, 3, 4);
  oracle::fill_uniform(dw.weight, rng, -1, 1);
  oracle::fill_uniform(dw.bias, rng, -1, 1);
  auto xx = oracle::random_tensor<float>(rng, 1, 4, 6, 6);
  Tensor<float> yd = srkit::conv2d(xx, dw);
  for (Index c = 0; c < 4; ++c) {
    auto one = srkit::split_channels(xx, {1, 1, 1, 1})[c];
    auto pc = srkit::make_conv_params<float>(1, 1, 3);
    for (Index i = 0; i < 9; ++i) pc.weight.data()[i] = dw.weight(c, 0, i / 3, i % 3);
    pc.bias.data()[0] = dw.bias.data()[c];
    Tensor<float> yc = srkit::conv2d(one, pc);
    for (Index h = 0; h < 6; ++h)
      for (Index w = 0; w < 6; ++w) CHECK(yd(0, c, h, w) == yc(0, 0, h, w));
  }
}

TEST_CASE("cascade with slice-selecting fusions equals a plain chain") {
  Rng rng(33);
  const Index C = 6;
  auto x = oracle::random_tensor<float>(rng, 1, C, 5, 5);
  std::vector<srkit::UnitParams<float>> units(3);
  for (auto& u : units) {
    u.conv0 = srkit::make_conv_params<float>(C, C, 3);
    u.conv1 = srkit::make_conv_params<float>(C, C, 3);
    oracle::fill_uniform(u.conv0.weight, rng, -0.3, 0.3);
    oracle::fill_uniform(u.conv0.bias, rng, -0.1, 0.1);
    oracle::fill_uniform(u.conv1.weight, rng, -0.3, 0.3);
    oracle::fill_uniform(u.conv1.bias, rng, -0.1, 0.1);
  }
  // Fusion u reads C*(u+2) channels; select the last C (the unit output).
  std::vector<ConvParams<float>> fusions;
  for (int u = 0; u < 3; ++u) {
    auto f = srkit::make_conv_params<float>(C * (u + 2), C, 1);
    for (Index o = 0; o < C; ++o) f.weight.at(o, C * (u + 1) + o, 0, 0) = 1.0f;
    fusions.push_back(f);
  }

  Tensor<float> cascaded = srkit::local_cascade(x, units, fusions);
  Tensor<float> chained = srkit::local_cascade(x, units, {});
  CHECK(oracle::bitwise_equal(cascaded, chained));
}

TEST_CASE("forward shape contract") {
  auto net = srkit::build_network<float>(srkit::make_network_spec("carn"), 3);
  Rng rng(34);
  Tensor<float> x(1, 3, 8, 8);
  oracle::fill_uniform(x, rng, 0, 1);
  for (int s : {2, 3, 4}) {
    Tensor<float> y = net.forward(x, s);
    CHECK(y.n() == 1);
    CHECK(y.c() == 3);
    CHECK(y.h() == 8 * s);
    CHECK(y.w() == 8 * s);
  }
  CHECK_THROWS_AS(net.forward(x, 5), srkit::UsageError);

  NetworkSpec only2 = srkit::make_network_spec("carn");
  only2.scales = {2};
  auto net2 = srkit::build_network<float>(only2, 3);
  CHECK_THROWS_AS(net2.forward(x, 3), srkit::UsageError);
}

TEST_CASE("baseline forward is a plain chain of residual blocks") {
  NetworkSpec s = srkit::make_network_spec("baseline");
  s.scales = {2};
  auto net = srkit::build_network<float>(s, 9);
  Rng rng(35);
  Tensor<float> x(1, 3, 6, 7);
  oracle::fill_uniform(x, rng, 0, 1);

  Tensor<float> h = srkit::conv2d(x, net.conv_of("entry"));
  for (int b = 0; b < 3; ++b)
    for (int u = 0; u < 3; ++u) {
      const std::string p = "b" + std::to_string(b) + ".u" + std::to_string(u) + ".";
      h = srkit::residual_block(h, net.conv_of(p + "conv0"), net.conv_of(p + "conv1"));
    }
  h = srkit::pixel_shuffle(srkit::conv2d(h, net.conv_of("head.x2.conv")), 2);
  h = srkit::conv2d(h, net.conv_of("exit"));

  CHECK(oracle::bitwise_equal(net.forward(x, 2), h));
}

TEST_CASE("default network forward equals the op-composition oracle") {
  auto net = srkit::build_network<float>(srkit::make_network_spec("carn"), 10);
  Rng rng(36);
  Tensor<float> x(1, 3, 5, 6);
  oracle::fill_uniform(x, rng, 0, 1);

  auto block = [&](int b, const Tensor<float>& in) {
    std::vector<srkit::UnitParams<float>> units(3);
    std::vector<ConvParams<float>> fusions;
    for (int u = 0; u < 3; ++u) {
      const std::string p = "b" + std::to_string(b) + ".u" + std::to_string(u) + ".";
      units[u].conv0 = net.conv_of(p + "conv0");
      units[u].conv1 = net.conv_of(p + "conv1");
      fusions.push_back(net.conv_of("b" + std::to_string(b) + ".fuse" + std::to_string(u)));
    }
    return srkit::local_cascade(in, units, fusions);
  };

  Tensor<float> h0 = srkit::conv2d(x, net.conv_of("entry"));
  std::vector<Tensor<float>> hs = {h0};
  Tensor<float> h = h0;
  for (int b = 0; b < 3; ++b) {
    Tensor<float> r = block(b, h);
    auto inputs = hs;
    inputs.push_back(r);
    h = srkit::conv2d(srkit::concat_channels(inputs),
                      net.conv_of("global.fuse" + std::to_string(b)));
    hs.push_back(h);
  }
  Tensor<float> up = srkit::pixel_shuffle(srkit::conv2d(h, net.conv_of("head.x4.stage0")), 2);
  up = srkit::pixel_shuffle(srkit::conv2d(up, net.conv_of("head.x4.stage1")), 2);
  Tensor<float> expect = srkit::conv2d(up, net.conv_of("exit"));

  CHECK(oracle::bitwise_equal(net.forward(x, 4), expect));
}

TEST_CASE("recursive network equals an unshared clone with copied weights") {
  NetworkSpec shared = srkit::make_network_spec("carn-m");
  shared.blocks = 2;
  shared.units = 2;
  shared.channels = 16;
  auto a = srkit::build_network<float>(shared, 11);

  NetworkSpec flat = shared;
  flat.variant = "custom";
  flat.recursive = false;
  auto b = srkit::build_network<float>(flat, 12);
  for (auto& e : b.store.entries()) {
    if (e.name.rfind("b", 0) == 0 && e.name.find(".u") != std::string::npos) {
      // bX.uY.convZ.w -> shared.uY.convZ.w
      const std::string canon = "shared." + e.name.substr(e.name.find("u"));
      e.value = a.store.value(canon).clone();
    } else {
      e.value = a.store.value(e.name).clone();
    }
  }

  Rng rng(37);
  Tensor<float> x(1, 3, 6, 6);
  oracle::fill_uniform(x, rng, 0, 1);
  for (int s : {2, 3, 4})
    CHECK(oracle::bitwise_equal(a.forward(x, s), b.forward(x, s)));
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
  auto net = srkit::build_network<float>(small_spec(false), 13);
  Rng rng(38);
  Tensor<float> x(1, 3, 4, 4);
  oracle::fill_uniform(x, rng, 0, 1);
  srkit::Tape<float> tape;
  Tensor<float> y = net.forward(x, 2, &tape);
  Tensor<float> zero(y.n(), y.c(), y.h(), y.w());
  auto grads = net.backward(tape, zero);
  for (const auto& g : grads.by_entry)
    for (Index i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 0.0f);
}

TEST_CASE("backward leaves inactive heads untouched") {
  NetworkSpec s = small_spec(false);
  s.scales = {2, 4};
  auto net = srkit::build_network<float>(s, 14);
  Rng rng(39);
  Tensor<float> x(1, 3, 4, 4);
  oracle::fill_uniform(x, rng, 0, 1);
  srkit::Tape<float> tape;
  Tensor<float> y = net.forward(x, 2, &tape);
  auto g = oracle::random_tensor<float>(rng, y.n(), y.c(), y.h(), y.w());
  auto grads = net.backward(tape, g);
  bool some_nonzero = false;
  for (size_t i = 0; i < net.store.entries().size(); ++i) {
    const auto& e = net.store.entries()[i];
    if (e.name.rfind("head.x4", 0) == 0) {
      for (Index j = 0; j < grads.by_entry[i].size(); ++j)
        CHECK(grads.by_entry[i].data()[j] == 0.0f);
    } else {
      for (Index j = 0; j < grads.by_entry[i].size(); ++j)
        some_nonzero = some_nonzero || grads.by_entry[i].data()[j] != 0.0f;
    }
  }
  CHECK(some_nonzero);
}

TEST_CASE("whole-network gradients match finite differences") {
  NetworkSpec s = small_spec(true, 2);  // efficient units exercise all op kinds
  auto net = srkit::build_network<double>(s, 15);
  Rng rng(40);
  Tensor<double> x(1, 3, 4, 4);
  oracle::fill_uniform(x, rng, 0, 1);
  auto gout = oracle::random_tensor<double>(rng, 1, 3, 12, 12);  // scale 3

  srkit::Tape<double> tape;
  Tensor<double> y = net.forward(x, 3, &tape);
  REQUIRE(y.h() == 12);
  auto grads = net.backward(tape, gout);

  auto loss = [&]() {
    Tensor<double> yy = net.forward(x, 3);
    double l = 0;
    for (Index i = 0; i < yy.size(); ++i) l += gout.data()[i] * yy.data()[i];
    return l;
  };

  const double h = 1e-5;
  int checked = 0;
  for (size_t ei = 0; ei < net.store.entries().size() && checked < 24; ei += 2) {
    auto& e = net.store.entries()[ei];
    const Index j = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(e.value.size())));
    const double saved = e.value.data()[j];
    e.value.data()[j] = saved + h;
    const double lp = loss();
    e.value.data()[j] = saved - h;
    const double lm = loss();
    e.value.data()[j] = saved;
    const double fd = (lp - lm) / (2 * h);
    CHECK(oracle::rel_err(fd, grads.by_entry[ei].data()[j]) < 1e-5);
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("shared gradients equal the summed per-use gradients of a clone") {
  NetworkSpec shared = srkit::make_network_spec("carn-m");
  shared.blocks = 3;
  shared.units = 2;
  shared.channels = 8;
  shared.group_size = 4;
  auto a = srkit::build_network<double>(shared, 16);

  NetworkSpec flat = shared;
  flat.variant = "custom";
  flat.recursive = false;
  auto b = srkit::build_network<double>(flat, 17);
  for (auto& e : b.store.entries()) {
    if (e.name.rfind("b", 0) == 0 && e.name.find(".u") != std::string::npos)
      e.value = a.store.value("shared." + e.name.substr(e.name.find("u"))).clone();
    else
      e.value = a.store.value(e.name).clone();
  }

  Rng rng(41);
  Tensor<double> x(1, 3, 5, 5);
  oracle::fill_uniform(x, rng, 0, 1);
  auto gout = oracle::random_tensor<double>(rng, 1, 3, 10, 10);

  srkit::Tape<double> ta, tb;
  Tensor<double> ya = a.forward(x, 2, &ta);
  Tensor<double> yb = b.forward(x, 2, &tb);
  CHECK(oracle::bitwise_equal(ya, yb));
  auto ga = a.backward(ta, gout);
  auto gb = b.backward(tb, gout);

  for (size_t i = 0; i < a.store.entries().size(); ++i) {
    const auto& e = a.store.entries()[i];
    if (e.name.rfind("shared.", 0) != 0) continue;
    // Sum the clone's per-block gradients for this unit parameter.
    Tensor<double> sum(e.value.n(), e.value.c(), e.value.h(), e.value.w());
    for (int blk = 0; blk < shared.blocks; ++blk) {
      const std::string name = "b" + std::to_string(blk) + "." + e.name.substr(7);
      sum.flat() += gb.by_entry[b.store.index_of(name)].flat();
    }
    for (Index j = 0; j < sum.size(); ++j)
      CHECK(oracle::rel_err(sum.data()[j], ga.by_entry[i].data()[j]) < 1e-12);
  }
}

TEST_CASE("checkpoint golden bytes") {
  srkit::ParamStore<float> store;
  Tensor<float> w(1, 1, 1, 1);
  w.data()[0] = 1.0f;
  store.add("a.w", w, 4, 1);
  store.add_alias("x.w", "a.w");

  std::string expect = "CRNK";
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) expect.push_back(char((v >> (8 * i)) & 0xff));
  };
  auto u16 = [&](std::uint16_t v) {
    expect.push_back(char(v & 0xff));
    expect.push_back(char(v >> 8));
  };
  u32(1);  // version
  u32(1);  // entry count
  u16(3);
  expect += "a.w";
  expect.push_back(0);  // dtype f32
  expect.push_back(4);  // rank
  u32(1);
  u32(1);
  u32(1);
  u32(1);
  u32(0x3f800000);  // 1.0f
  u32(1);           // alias count
  u16(3);
  expect += "x.w";
  u16(3);
  expect += "a.w";

  CHECK(srkit::checkpoint_bytes(store) == expect);
}

TEST_CASE("checkpoint round trip restores every value and alias") {
  NetworkSpec s = srkit::make_network_spec("carn-m");
  s.blocks = 2;
  s.units = 2;
  s.channels = 8;
  auto net = srkit::build_network<float>(s, 18);
  const std::string path = "ckpt_roundtrip.crnk";
  srkit::save_checkpoint(net.store, path);

  auto other = srkit::build_network<float>(s, 999);
  srkit::load_checkpoint(other.store, path);
  for (size_t i = 0; i < net.store.entries().size(); ++i)
    CHECK(oracle::bitwise_equal(net.store.entries()[i].value, other.store.entries()[i].value));
  CHECK(other.store.aliases() == net.store.aliases());

  // Same store serializes to identical bytes after the round trip.
  CHECK(srkit::checkpoint_bytes(other.store) == srkit::checkpoint_bytes(net.store));

  // Loading into a mismatched architecture fails cleanly.
  auto wrong = srkit::build_network<float>(small_spec(false), 1);
  CHECK_THROWS_AS(srkit::load_checkpoint(wrong.store, path), srkit::DataError);
  CHECK_THROWS_AS(srkit::load_checkpoint(net.store, "no_such_file.crnk"), srkit::DataError);
  std::remove(path.c_str());
}
