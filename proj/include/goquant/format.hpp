// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary containers, little-endian throughout.
//
//   model  (.gq)  : "GOQT" u16 version, u32 count, count x TensorRecord
//   tensor (.gqt) : "GQTL" u16 version, u32 count, count x {name, u8 rank, u32 dims[rank], f32 data}
//
// A TensorRecord holds the header fields followed by one bit-packed payload per
// output row (codes, then stride/sign metadata, then scale integers), padded to a byte.
// See docs/format.md for the field-by-field layout.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "goquant/error.hpp"
#include "goquant/geometry.hpp"
#include "goquant/lattice.hpp"
#include "goquant/matrix.hpp"
#include "goquant/quantizer.hpp"

namespace goquant {

inline constexpr char kModelMagic[4] = {'G', 'O', 'Q', 'T'};
inline constexpr char kTensorMagic[4] = {'G', 'Q', 'T', 'L'};
inline constexpr std::uint16_t kModelVersion = 1;
inline constexpr std::uint16_t kTensorVersion = 1;

namespace io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void magic(const char (&m)[4]) {
    for (char c : m) buf_.push_back(static_cast<std::uint8_t>(c));
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint8_t u8() { return need(1)[0]; }
  std::uint16_t u16() {
    const auto p = need(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto p = need(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> bytes(std::size_t n) { return need(n); }
  std::string str() {
    const std::uint32_t n = u32();
    const auto p = need(n);
    return std::string(p.begin(), p.end());
  }
  void magic(const char (&m)[4]) {
    const auto p = need(4);
    if (std::memcmp(p.data(), m, 4) != 0) throw Error(Errc::bad_magic, "bad magic: expected '" + std::string(m, 4) + "'");
  }
  bool done() const noexcept { return pos_ == b_.size(); }
  std::size_t remaining() const noexcept { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> need(std::size_t n) {
    if (n > remaining()) throw Error(Errc::eof, "unexpected EOF");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

/// LSB-first bit packer.
class BitWriter {
 public:
  void put(std::uint32_t value, unsigned bits) {
    for (unsigned b = 0; b < bits; ++b) {
      if (nbits_ % 8 == 0) buf_.push_back(0);
      if ((value >> b) & 1u) buf_.back() |= static_cast<std::uint8_t>(1u << (nbits_ % 8));
      ++nbits_;
    }
  }
  void put_signed(std::int32_t value, unsigned bits) {
    put(static_cast<std::uint32_t>(value) & ((bits == 32) ? ~0u : ((1u << bits) - 1)), bits);
  }
  std::size_t bits() const noexcept { return nbits_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t nbits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t get(unsigned bits) {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits; ++b) {
      if (pos_ / 8 >= b_.size()) throw Error(Errc::eof, "unexpected EOF in packed payload");
      if ((b_[pos_ / 8] >> (pos_ % 8)) & 1u) v |= (1u << b);
      ++pos_;
    }
    return v;
  }
  std::int32_t get_signed(unsigned bits) {
    const std::uint32_t u = get(bits);
    if (bits < 32 && (u >> (bits - 1)) & 1u) return static_cast<std::int32_t>(u | ~((1u << bits) - 1));
    return static_cast<std::int32_t>(u);
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::data, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::data, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::data, "write failed for '" + path + "'");
}

}  // namespace io

// ---------------------------------------------------------------------------
// Quantized model files
// ---------------------------------------------------------------------------

struct Model {
  std::vector<QuantizedTensor> tensors;

  const QuantizedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  friend bool operator==(const Model&, const Model&) = default;
};

namespace detail {

inline constexpr std::uint8_t kModeRefBit = 0x01;
inline constexpr std::uint8_t kNormPerBlockBit = 0x10;

inline std::vector<std::uint8_t> pack_row(const QuantizedTensor& qt, std::size_t i) {
  const auto& cfg = qt.config;
  io::BitWriter bw;
  for (LatticeCode c : qt.row_codes(i)) bw.put(c, static_cast<unsigned>(cfg.bits));
  if (cfg.k == 2) {
    for (std::size_t u = 0; u < qt.micro_count(); ++u) {
      const auto& mb = qt.micro[i * qt.micro_count() + u];
      bw.put(static_cast<std::uint32_t>(mb.stride - 1), static_cast<unsigned>(kStrideFieldBits));
      bw.put(mb.signs, static_cast<unsigned>(cfg.micro / 2));
    }
  }
  const std::size_t n_macro = qt.macro_count();
  for (std::size_t m = 0; m < n_macro; ++m) bw.put_signed(qt.c1q[i * n_macro + m], static_cast<unsigned>(cfg.scale_bits));
  if (cfg.k == 2)
    for (std::size_t m = 0; m < n_macro; ++m) bw.put_signed(qt.c2q[i * n_macro + m], static_cast<unsigned>(cfg.scale_bits));
  return bw.bytes();
}

inline void unpack_row(std::span<const std::uint8_t> bytes, QuantizedTensor& qt, std::size_t i) {
  const auto& cfg = qt.config;
  io::BitReader br(bytes);
  for (std::size_t k = 0; k < qt.d_in; ++k)
    qt.codes[i * qt.d_in + k] = static_cast<LatticeCode>(br.get(static_cast<unsigned>(cfg.bits)));
  if (cfg.k == 2) {
    for (std::size_t u = 0; u < qt.micro_count(); ++u) {
      auto& mb = qt.micro[i * qt.micro_count() + u];
      mb.stride = static_cast<std::uint8_t>(br.get(static_cast<unsigned>(kStrideFieldBits)) + 1);
      mb.signs = static_cast<std::uint16_t>(br.get(static_cast<unsigned>(cfg.micro / 2)));
      mb.alignment = 0.0;
    }
  }
  const std::size_t n_macro = qt.macro_count();
  for (std::size_t m = 0; m < n_macro; ++m) qt.c1q[i * n_macro + m] = br.get_signed(static_cast<unsigned>(cfg.scale_bits));
  if (cfg.k == 2)
    for (std::size_t m = 0; m < n_macro; ++m) qt.c2q[i * n_macro + m] = br.get_signed(static_cast<unsigned>(cfg.scale_bits));
}

inline std::size_t s_norm_count(const QuantizedTensor& qt) {
  return qt.config.norm_scope == NormScope::per_channel ? qt.d_out : qt.d_out * qt.macro_count();
}

/// Stored strides must name a feasible pairing for their micro-block length.
inline void validate_strides(const QuantizedTensor& qt) {
  if (qt.config.k != 2) return;
  StrideTables tables(qt.config.micro);
  const std::size_t n_micro = qt.micro_count();
  for (std::size_t i = 0; i < qt.d_out; ++i)
    for (std::size_t u = 0; u < n_micro; ++u) {
      const std::size_t len = std::min(qt.config.micro, qt.d_in - u * qt.config.micro);
      const auto& table = tables.for_length(len);
      const auto& mb = qt.micro[i * n_micro + u];
      const bool ok = table.paired() == 0 ? mb.stride == 1 : table.find(mb.stride) != nullptr;
      if (!ok) throw Error(Errc::corrupt, "tensor '" + qt.name + "': invalid stride " + std::to_string(mb.stride));
    }
}

inline void write_record(io::ByteWriter& w, const QuantizedTensor& qt) {
  validate_tensor(qt);
  const auto& cfg = qt.config;
  w.str(qt.name);
  w.u32(static_cast<std::uint32_t>(qt.d_out));
  w.u32(static_cast<std::uint32_t>(qt.d_in));
  w.u8(cfg.lattice().id());
  w.u16(static_cast<std::uint16_t>(cfg.macro));
  w.u16(static_cast<std::uint16_t>(cfg.micro));
  w.u8(static_cast<std::uint8_t>(cfg.k));
  w.u8(static_cast<std::uint8_t>((cfg.mode == SolveMode::ref ? kModeRefBit : 0) |
                                 (cfg.norm_scope == NormScope::per_macro_block ? kNormPerBlockBit : 0)));
  w.u8(static_cast<std::uint8_t>(cfg.act_bits));
  w.u8(static_cast<std::uint8_t>(cfg.scale_bits));
  w.f32(static_cast<float>(cfg.alpha));
  w.f32(static_cast<float>(cfg.lambda));
  for (float s : qt.s_norm) w.f32(s);
  for (float s : qt.s_vec) w.f32(s);
  w.f32(qt.s_c1);
  w.f32(qt.s_c2);
  const std::size_t row_bytes = row_payload_bytes(cfg, qt.d_in);
  for (std::size_t i = 0; i < qt.d_out; ++i) {
    auto row = pack_row(qt, i);
    row.resize(row_bytes, 0);
    w.bytes(row);
  }
}

inline QuantizedTensor read_record(io::ByteReader& r) {
  QuantizedTensor qt;
  qt.name = r.str();
  qt.d_out = r.u32();
  qt.d_in = r.u32();
  auto& cfg = qt.config;
  const LatticeSpec spec = LatticeSpec::from_id(r.u8());
  cfg.topology = spec.topology();
  cfg.bits = spec.bits();
  cfg.macro = r.u16();
  cfg.micro = r.u16();
  cfg.k = r.u8();
  const std::uint8_t mode = r.u8();
  if (mode & ~(kModeRefBit | kNormPerBlockBit)) throw Error(Errc::corrupt, "unknown mode bits");
  cfg.mode = (mode & kModeRefBit) ? SolveMode::ref : SolveMode::geo;
  cfg.norm_scope = (mode & kNormPerBlockBit) ? NormScope::per_macro_block : NormScope::per_channel;
  cfg.act_bits = r.u8();
  cfg.scale_bits = r.u8();
  cfg.alpha = r.f32();
  cfg.lambda = r.f32();
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(Errc::corrupt, std::string("tensor '") + qt.name + "': " + e.what());
  }
  if (qt.d_in == 0) throw Error(Errc::corrupt, "tensor '" + qt.name + "': d_in is zero");

  const std::size_t n_norm = s_norm_count(qt);
  const std::size_t row_bytes = row_payload_bytes(cfg, qt.d_in);
  // Reject impossible sizes before allocating.
  if (n_norm * 4 + qt.d_in * 4 + 8 + qt.d_out * row_bytes > r.remaining()) throw Error(Errc::eof, "unexpected EOF");

  qt.s_norm.resize(n_norm);
  for (auto& s : qt.s_norm) s = r.f32();
  qt.s_vec.resize(qt.d_in);
  for (auto& s : qt.s_vec) s = r.f32();
  qt.s_c1 = r.f32();
  qt.s_c2 = r.f32();

  const std::size_t n_macro = qt.macro_count();
  qt.codes.resize(qt.d_out * qt.d_in);
  qt.c1q.resize(qt.d_out * n_macro);
  if (cfg.k == 2) {
    qt.micro.resize(qt.d_out * qt.micro_count());
    qt.c2q.resize(qt.d_out * n_macro);
  }
  for (std::size_t i = 0; i < qt.d_out; ++i) unpack_row(r.bytes(row_bytes), qt, i);
  validate_tensor(qt);
  validate_strides(qt);
  return qt;
}

inline std::size_t record_size(const QuantizedTensor& qt) {
  constexpr std::size_t fixed = 4 /*name len*/ + 8 /*dims*/ + 1 /*lattice*/ + 2 + 2 + 1 + 1 + 1 + 1 + 4 + 4 + 8 /*s_c*/;
  return fixed + qt.name.size() + 4 * s_norm_count(qt) + 4 * qt.d_in + qt.d_out * row_payload_bytes(qt.config, qt.d_in);
}

}  // namespace detail

inline std::vector<std::uint8_t> save_model(const Model& model) {
  io::ByteWriter w;
  w.magic(kModelMagic);
  w.u16(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.tensors.size()));
  for (const auto& t : model.tensors) detail::write_record(w, t);
  return w.take();
}

inline Model load_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.magic(kModelMagic);
  const std::uint16_t version = r.u16();
  if (version != kModelVersion) throw Error(Errc::bad_version, "unsupported model version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  Model m;
  for (std::uint32_t t = 0; t < count; ++t) m.tensors.push_back(detail::read_record(r));
  if (!r.done()) throw Error(Errc::corrupt, "trailing bytes after last tensor record");
  return m;
}

/// Size in bytes implied by the storage-accounting formula.
inline std::size_t expected_model_size(const Model& model) {
  std::size_t n = 4 + 2 + 4;
  for (const auto& t : model.tensors) n += detail::record_size(t);
  return n;
}

inline void save_model_file(const std::string& path, const Model& m) { io::write_file(path, save_model(m)); }
inline Model load_model_file(const std::string& path) { return load_model(io::read_file(path)); }

// ---------------------------------------------------------------------------
// Plain f32 tensor containers
// ---------------------------------------------------------------------------

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  /// Rank-2 tensors map directly; rank-1 tensors become a single row.
  Matrix as_matrix() const {
    if (shape.size() == 1) {
      Matrix m(1, shape[0]);
      std::copy(data.begin(), data.end(), m.data.begin());
      return m;
    }
    if (shape.size() != 2) throw Error(Errc::data, "tensor '" + name + "' is not a matrix");
    Matrix m(shape[0], shape[1]);
    std::copy(data.begin(), data.end(), m.data.begin());
    return m;
  }

  static NamedTensor from_matrix(std::string name, const Matrix& m) {
    NamedTensor t{std::move(name), {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, {}};
    t.data.assign(m.data.begin(), m.data.end());
    return t;
  }

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct TensorContainer {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const NamedTensor& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw Error(Errc::data, "tensor '" + name + "' not found");
  }

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;
};

inline constexpr std::size_t kMaxTensorRank = 8;

inline std::vector<std::uint8_t> save_tensor_container(const TensorContainer& c) {
  io::ByteWriter w;
  w.magic(kTensorMagic);
  w.u16(kTensorVersion);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    std::size_t count = 1;
    for (auto d : t.shape) count *= d;
    if (t.shape.empty() || t.shape.size() > kMaxTensorRank || count != t.data.size())
      throw Error(Errc::data, "tensor '" + t.name + "': shape does not match data");
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

inline TensorContainer load_tensor_container(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.magic(kTensorMagic);
  const std::uint16_t version = r.u16();
  if (version != kTensorVersion) throw Error(Errc::bad_version, "unsupported tensor container version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  TensorContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint8_t rank = r.u8();
    if (rank == 0 || rank > kMaxTensorRank) throw Error(Errc::corrupt, "tensor '" + t.name + "': bad rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.u32());
      n *= t.shape.back();
    }
    if (n > r.remaining() / 4) throw Error(Errc::eof, "unexpected EOF");
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32();
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error(Errc::corrupt, "trailing bytes after last tensor");
  return c;
}

inline void save_tensor_file(const std::string& path, const TensorContainer& c) {
  io::write_file(path, save_tensor_container(c));
}
inline TensorContainer load_tensor_file(const std::string& path) { return load_tensor_container(io::read_file(path)); }

}  // namespace goquant
