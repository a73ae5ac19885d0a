#pragma once

// Binary checkpoint of a ParamStore: values, Adam moments and step counter.
//
//   "EYNT" | u32 version=1 | u32 entry count
//   per entry: u16 name length | name bytes | u8 rank | rank x u32 dims |
//              value f32[] | m f32[] | v f32[]
//   u64 step | u32 CRC32 of all preceding bytes
//
// Integers and reals are little-endian. Rank is always written as 4; load
// accepts 1..4 and left-pads the dims with 1s.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/param_store.hpp"
#include "eyenet/tensor.hpp"

namespace eyenet {

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

inline constexpr std::array<char, 4> kCheckpointMagic{'E', 'Y', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>((std::uint64_t(v) >> (8 * i)) & 0xff));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}

  template <typename U>
  U get(const std::string& what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float get_f32(const std::string& what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
  std::string get_string(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (end_ - pos_ < n) throw CheckpointError("checkpoint truncated while reading " + what);
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ParamStore<float>& store) {
  if (store.empty()) throw ContractError("checkpoint_save: empty parameter store");
  detail::ByteWriter w;
  w.put_raw(kCheckpointMagic.data(), 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries()) {
    if (e.name.size() > 0xffff) throw ContractError("checkpoint_save: parameter name too long");
    w.put(static_cast<std::uint16_t>(e.name.size()));
    w.put_raw(e.name.data(), e.name.size());
    const Shape& s = e.value.shape();
    w.put(std::uint8_t{4});
    for (std::size_t d : {s.n, s.c, s.h, s.w}) w.put(static_cast<std::uint32_t>(d));
    for (const Tensor4<float>* t : {&e.value, &e.m, &e.v}) {
      for (float f : t->data()) w.put_f32(f);
    }
  }
  w.put(store.step);
  const std::uint32_t crc = detail::crc32_of(w.bytes().data(), w.bytes().size());
  w.put(crc);
  return std::move(w.bytes());
}

inline ParamStore<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8 + 4) throw CheckpointError("checkpoint truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) throw CheckpointError("checkpoint: bad magic");
  {
    detail::ByteReader hdr(bytes, bytes.size());
    hdr.get_string(4, "magic");
    const auto version = hdr.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
  }
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes, bytes.size());
  std::uint32_t stored = 0;
  for (std::size_t i = 0; i < 4; ++i) stored |= std::uint32_t(bytes[body + i]) << (8 * i);
  if (detail::crc32_of(bytes.data(), body) != stored) throw CheckpointError("checkpoint: checksum mismatch");

  detail::ByteReader r(bytes, body);
  r.get_string(4, "magic");
  r.get<std::uint32_t>("version");
  const auto count = r.get<std::uint32_t>("entry count");
  ParamStore<float> store;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string where = "entry " + std::to_string(k);
    const auto len = r.get<std::uint16_t>(where + " name length");
    const std::string name = r.get_string(len, where + " name");
    const auto rank = r.get<std::uint8_t>("'" + name + "' rank");
    if (rank < 1 || rank > 4) throw CheckpointError("checkpoint: entry '" + name + "' has rank " + std::to_string(rank));
    std::array<std::size_t, 4> dims{1, 1, 1, 1};
    for (std::size_t d = 4 - rank; d < 4; ++d) dims[d] = r.get<std::uint32_t>("'" + name + "' dims");
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    if (s.size() * 12 > r.remaining()) throw CheckpointError("checkpoint truncated while reading '" + name + "'");
    auto& e = store.add(name, Tensor4<float>(s));
    for (Tensor4<float>* t : {&e.value, &e.m, &e.v}) {
      for (float& f : t->data()) f = r.get_f32("'" + name + "' payload");
    }
  }
  store.step = r.get<std::uint64_t>("step");
  if (r.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes after step counter");
  return store;
}

inline void checkpoint_save(const ParamStore<float>& store, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(store);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline ParamStore<float> checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError("'" + path.string() + "': " + e.what());
  }
}

// Checks that `loaded` has exactly the entries and shapes of `reference`
// (typically a freshly built store for the same NetworkSpec).
inline void check_against(const ParamStore<float>& loaded, const ParamStore<float>& reference) {
  for (const auto& e : reference.entries()) {
    const auto* got = loaded.find(e.name);
    if (!got) throw CheckpointError("checkpoint: missing entry '" + e.name + "'");
    if (got->value.shape() != e.value.shape()) {
      throw CheckpointError("checkpoint: entry '" + e.name + "' has shape " + got->value.shape().str() + ", expected " +
                            e.value.shape().str());
    }
  }
  for (const auto& e : loaded.entries()) {
    if (!reference.find(e.name)) throw CheckpointError("checkpoint: unexpected entry '" + e.name + "'");
  }
}

}  // namespace eyenet
