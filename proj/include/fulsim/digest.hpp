#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fulsim/errors.hpp"
#include "fulsim/learning.hpp"

namespace fulsim {

using Bytes = std::vector<std::uint8_t>;

/// Little-endian byte sink used for every hashed encoding.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

  /// u64 length prefix followed by the raw bytes.
  void str(std::string_view s) {
    u64(s.size());
    raw(s);
  }

  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void raw(std::span<const std::uint8_t> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const Bytes& bytes() const& { return bytes_; }
  Bytes bytes() && { return std::move(bytes_); }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }

  Bytes bytes_;
};

/// Cursor over little-endian bytes; throws IntegrityError when it runs dry.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::uint64_t get_le(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw IntegrityError("truncated byte stream");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

/// SHA-256 rendered as 64 lowercase hex characters.
inline std::string digest(std::span<const std::uint8_t> bytes) {
  std::array<std::uint8_t, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != 32) {
    throw Error("SHA-256 computation failed");
  }
  return to_hex(std::span<const std::uint8_t>(md.data(), len));
}

inline std::string digest(std::string_view text) {
  return digest(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                              text.size()));
}

inline bool is_digest_hex(std::string_view s) {
  if (s.size() != 64) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

inline const std::string& zero_digest() {
  static const std::string z(64, '0');
  return z;
}

/// Layer count (u32), each dim (u32), then every coefficient as binary64,
/// all little-endian.
inline Bytes canonical_bytes(const ModelParams& params) {
  params.validate();
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(params.arch.size()));
  for (auto d : params.arch) w.u32(static_cast<std::uint32_t>(d));
  for (double c : params.coefficients) w.f64(c);
  return std::move(w).bytes();
}

inline ModelParams params_from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ModelParams p;
  const auto layers = r.u32();
  if (layers < 2 || layers > 64) throw IntegrityError("implausible layer count in params blob");
  for (std::uint32_t i = 0; i < layers; ++i) p.arch.push_back(r.u32());
  for (auto d : p.arch) {
    if (d == 0) throw IntegrityError("zero layer width in params blob");
  }
  const std::size_t n = param_count(p.arch);
  if (bytes.size() != 4 * (std::size_t{layers} + 1) + 8 * n) {
    throw IntegrityError("params blob length mismatch");
  }
  p.coefficients.resize(n);
  for (auto& c : p.coefficients) c = r.f64();
  if (!r.done()) throw IntegrityError("trailing bytes in params blob");
  try {
    p.validate();
  } catch (const InvalidArgument& e) {
    throw IntegrityError(std::string("invalid params blob: ") + e.what());
  }
  return p;
}

inline std::string params_digest(const ModelParams& params) { return digest(canonical_bytes(params)); }

inline void append_dataset(ByteWriter& w, const Dataset& d) {
  w.u32(static_cast<std::uint32_t>(d.num_classes));
  w.u64(d.size());
  w.u32(static_cast<std::uint32_t>(d.dims()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    w.i64(d.sample_ids[i]);
    w.u32(static_cast<std::uint32_t>(d.labels[i]));
    for (double v : d.features.row(i)) w.f64(v);
  }
}

inline std::string dataset_digest(const Dataset& d) {
  ByteWriter w;
  append_dataset(w, d);
  return digest(w.bytes());
}

/// Sorted keys, each key and value length-prefixed, preceded by the entry
/// count. std::map iteration order is the lexicographic key order.
inline Bytes canonical_bytes(const std::map<std::string, std::string>& payload) {
  ByteWriter w;
  w.u64(payload.size());
  for (const auto& [k, v] : payload) {
    w.str(k);
    w.str(v);
  }
  return std::move(w).bytes();
}

}  // namespace fulsim
