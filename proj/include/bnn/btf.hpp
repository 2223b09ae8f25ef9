#pragma once

// BTF1 tensor files: magic "BTF1", u8 dtype, u8 ndim, ndim x u32 dims, then
// the row-major payload. Everything little-endian. Packed-bit payloads are the
// 64-bit word array written as bytes, pad bits zero.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

enum class BtfType : std::uint8_t { Float32 = 0, Bits = 1, Int32 = 2 };

using BtfTensor = std::variant<FloatTensor, BitPlane, IntTensor>;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void str(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked cursor; every short read throws FormatError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::span<const std::uint8_t> take(std::size_t n);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_btf(ByteWriter& out, const FloatTensor& t);
void write_btf(ByteWriter& out, const BitPlane& t);
void write_btf(ByteWriter& out, const IntTensor& t);

template <typename T>
std::vector<std::uint8_t> encode_btf(const T& t) {
  ByteWriter w;
  write_btf(w, t);
  return w.take();
}

BtfTensor read_btf(ByteReader& in);
BtfTensor decode_btf(std::span<const std::uint8_t> bytes);

// Typed decode; a dtype other than the requested one is a FormatError.
FloatTensor decode_btf_float(std::span<const std::uint8_t> bytes);
IntTensor decode_btf_int(std::span<const std::uint8_t> bytes);
BitPlane decode_btf_bits(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace bnn
