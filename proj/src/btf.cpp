#include "bnn/btf.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace bnn {

namespace {

constexpr std::uint8_t kMagic[4] = {0x42, 0x54, 0x46, 0x31};

void write_header(ByteWriter& out, BtfType type, const Shape& dims) {
  for (auto b : kMagic) out.u8(b);
  out.u8(static_cast<std::uint8_t>(type));
  if (dims.size() > 255) throw ShapeError("BTF1 supports at most 255 dimensions");
  out.u8(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) {
    if (d > 0xffffffffu) throw ShapeError("BTF1 dimension exceeds 32 bits");
    out.u32(static_cast<std::uint32_t>(d));
  }
}

}  // namespace

void ByteWriter::u16(std::uint16_t v) {
  u8(static_cast<std::uint8_t>(v));
  u8(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > remaining()) {
    throw FormatError("truncated input: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                      ", have " + std::to_string(remaining()));
  }
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint16_t ByteReader::u16() {
  auto b = take(2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t ByteReader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

void write_btf(ByteWriter& out, const FloatTensor& t) {
  write_header(out, BtfType::Float32, t.dims());
  for (float v : t.data()) out.f32(v);
}

void write_btf(ByteWriter& out, const BitPlane& t) {
  write_header(out, BtfType::Bits, t.dims());
  for (auto w : t.words()) out.u64(w);
}

void write_btf(ByteWriter& out, const IntTensor& t) {
  write_header(out, BtfType::Int32, t.dims());
  for (auto v : t.data()) out.u32(static_cast<std::uint32_t>(v));
}

BtfTensor read_btf(ByteReader& in) {
  auto magic = in.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad BTF1 magic");
  const auto type = in.u8();
  const auto ndim = in.u8();
  Shape dims(ndim);
  for (auto& d : dims) d = in.u32();
  const std::size_t n = element_count(dims);
  switch (static_cast<BtfType>(type)) {
    case BtfType::Float32: {
      std::vector<float> data(n);
      for (auto& v : data) v = in.f32();
      try {
        return FloatTensor(std::move(dims), std::move(data));
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("BTF1 float payload: ") + e.what());
      }
    }
    case BtfType::Bits: {
      std::vector<std::uint64_t> words(word_count(n));
      for (auto& w : words) w = in.u64();
      try {
        return BitPlane(std::move(dims), std::move(words));
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("BTF1 bit payload: ") + e.what());
      }
    }
    case BtfType::Int32: {
      std::vector<std::int32_t> data(n);
      for (auto& v : data) v = static_cast<std::int32_t>(in.u32());
      return IntTensor(std::move(dims), std::move(data));
    }
  }
  throw FormatError("unknown BTF1 dtype " + std::to_string(type));
}

BtfTensor decode_btf(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  auto t = read_btf(in);
  if (in.remaining() != 0) throw FormatError("trailing bytes after BTF1 tensor");
  return t;
}

namespace {

template <typename T>
T decode_as(std::span<const std::uint8_t> bytes, const char* name) {
  auto t = decode_btf(bytes);
  if (auto* p = std::get_if<T>(&t)) return std::move(*p);
  throw FormatError(std::string("BTF1 blob is not a ") + name + " tensor");
}

}  // namespace

FloatTensor decode_btf_float(std::span<const std::uint8_t> bytes) { return decode_as<FloatTensor>(bytes, "float"); }
IntTensor decode_btf_int(std::span<const std::uint8_t> bytes) { return decode_as<IntTensor>(bytes, "int32"); }
BitPlane decode_btf_bits(std::span<const std::uint8_t> bytes) { return decode_as<BitPlane>(bytes, "packed-bit"); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace bnn
