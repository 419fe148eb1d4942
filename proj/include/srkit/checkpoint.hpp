#pragma once

// Bit-exact checkpoint container. Layout (all integers little-endian):
//   magic "CRNK" | version u32 | entry count u32
//   per entry: name length u16, UTF-8 name, dtype u8 (0 = f32), rank u8,
//              dims u32 each, raw little-endian f32 payload
//   alias count u32, then per alias: (name length u16 + alias name,
//              name length u16 + canonical name)

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "srkit/network.hpp"
#include "srkit/tensor.hpp"

namespace srkit {

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& what) : buf_(buf), what_(what) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() {
    const char* p = take(2);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                      (static_cast<std::uint8_t>(p[1]) << 8));
  }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) { return std::string(take(n), n); }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  const char* take(size_t n) {
    if (pos_ + n > buf_.size()) throw DataError(what_ + ": truncated file");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::string& buf_;
  std::string what_;
  size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(what + ": cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes,
                             const std::string& what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(what + ": cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(what + ": write failed for '" + path + "'");
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Serialized dims of an entry: rank 4 = full conv weight shape, rank 1 =
// bias length.
template <typename Scalar>
std::vector<std::uint32_t> entry_dims(const ParamEntry<Scalar>& e) {
  if (e.rank == 4)
    return {static_cast<std::uint32_t>(e.value.n()), static_cast<std::uint32_t>(e.value.c()),
            static_cast<std::uint32_t>(e.value.h()), static_cast<std::uint32_t>(e.value.w())};
  return {static_cast<std::uint32_t>(e.value.size())};
}

template <typename Scalar>
std::string checkpoint_bytes(const ParamStore<Scalar>& store) {
  std::string out;
  out += "CRNK";
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& e : store.entries()) {
    detail::put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    out.push_back(0);  // dtype 0 = f32
    const auto dims = entry_dims(e);
    out.push_back(static_cast<char>(dims.size()));
    for (std::uint32_t d : dims) detail::put_u32(out, d);
    for (Index i = 0; i < e.value.size(); ++i)
      detail::put_f32(out, static_cast<float>(e.value.data()[i]));
  }
  detail::put_u32(out, static_cast<std::uint32_t>(store.aliases().size()));
  for (const auto& [alias, canon] : store.aliases()) {
    detail::put_u16(out, static_cast<std::uint16_t>(alias.size()));
    out += alias;
    detail::put_u16(out, static_cast<std::uint16_t>(canon.size()));
    out += canon;
  }
  return out;
}

template <typename Scalar>
void save_checkpoint(const ParamStore<Scalar>& store, const std::string& path) {
  detail::write_file_bytes(path, checkpoint_bytes(store), "checkpoint");
}

// Schema-free view of a checkpoint, used to recover the network layout from
// a file alone (entry names and shapes pin the architecture).
struct RawCheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct RawCheckpoint {
  std::vector<RawCheckpointEntry> entries;
  std::map<std::string, std::string> aliases;
};

inline RawCheckpoint parse_checkpoint_bytes(const std::string& buf) {
  detail::ByteReader r(buf, "checkpoint");
  if (buf.size() < 4 || r.str(4) != "CRNK") throw DataError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  RawCheckpoint out;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    RawCheckpointEntry e;
    e.name = r.str(r.u16());
    if (r.u8() != 0) throw DataError("checkpoint: unsupported dtype for '" + e.name + "'");
    const int rank = r.u8();
    if (rank != 1 && rank != 4) throw DataError("checkpoint: bad rank for '" + e.name + "'");
    e.dims.resize(static_cast<size_t>(rank));
    std::uint64_t n = 1;
    for (auto& d : e.dims) {
      d = r.u32();
      n *= d;
    }
    if (n > (std::uint64_t(1) << 31)) throw DataError("checkpoint: oversized entry '" + e.name + "'");
    e.data.resize(static_cast<size_t>(n));
    for (auto& v : e.data) v = r.f32();
    out.entries.push_back(std::move(e));
  }
  const std::uint32_t alias_count = r.u32();
  for (std::uint32_t i = 0; i < alias_count; ++i) {
    const std::string alias = r.str(r.u16());
    out.aliases[alias] = r.str(r.u16());
  }
  if (!r.at_end()) throw DataError("checkpoint: trailing bytes");
  return out;
}

// Loads a checkpoint into a store built from the same spec; names, shapes,
// and alias tables must match exactly.
template <typename Scalar>
void load_checkpoint(ParamStore<Scalar>& store, const std::string& path) {
  const std::string buf = detail::read_file_bytes(path, "checkpoint");
  detail::ByteReader r(buf, "checkpoint");
  if (r.str(4) != "CRNK") throw DataError("checkpoint: bad magic in '" + path + "'");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  if (count != store.entries().size())
    throw DataError("checkpoint: has " + std::to_string(count) + " entries, network expects " +
                    std::to_string(store.entries().size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& e = store.entries()[i];
    const std::string name = r.str(r.u16());
    if (name != e.name)
      throw DataError("checkpoint: entry " + std::to_string(i) + " is '" + name +
                      "', network expects '" + e.name + "'");
    if (r.u8() != 0) throw DataError("checkpoint: unsupported dtype for '" + name + "'");
    const int rank = r.u8();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    if (dims != entry_dims(e))
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    for (Index j = 0; j < e.value.size(); ++j)
      e.value.data()[j] = static_cast<Scalar>(r.f32());
  }
  const std::uint32_t alias_count = r.u32();
  if (alias_count != store.aliases().size())
    throw DataError("checkpoint: alias table size mismatch");
  for (std::uint32_t i = 0; i < alias_count; ++i) {
    const std::string alias = r.str(r.u16());
    const std::string canon = r.str(r.u16());
    auto it = store.aliases().find(alias);
    if (it == store.aliases().end() || it->second != canon)
      throw DataError("checkpoint: alias '" + alias + "' -> '" + canon +
                      "' does not match the network");
  }
  if (!r.at_end()) throw DataError("checkpoint: trailing bytes in '" + path + "'");
}

}  // namespace srkit
