#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bnn/errors.hpp"

namespace bnn {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& dims);
std::string shape_string(const Shape& dims);

/// Dense row-major tensor. Floating-point tensors reject NaN/Inf when built
/// from caller data; buffers obtained through zeros() and filled in place are
/// the caller's responsibility.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape dims, std::vector<T> data);

  static Tensor zeros(Shape dims);
  static Tensor filled(Shape dims, T value);

  const Shape& dims() const { return dims_; }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Same element count, new shape.
  Tensor reshaped(Shape dims) const;
  void reshape(Shape dims);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Shape dims_;
  std::vector<T> data_;
};

using FloatTensor = Tensor<float>;
using IntTensor = Tensor<std::int32_t>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.dims(), std::move(out));
}

/// Packed ±1 tensor: bit i of the flat row-major element order lives in word
/// i / 64 at bit position i % 64. A set bit means +1. Pad bits past the last
/// element are always zero, so equal content means equal words.
class BitPlane {
 public:
  static constexpr std::size_t kWordBits = 64;

  BitPlane() = default;
  explicit BitPlane(Shape dims);
  // Adopts a word array; pad bits must already be zero.
  BitPlane(Shape dims, std::vector<std::uint64_t> words);

  const Shape& dims() const { return dims_; }
  std::size_t size() const { return size_; }
  std::span<const std::uint64_t> words() const { return words_; }

  bool get(std::size_t i) const { return (words_[i / kWordBits] >> (i % kWordBits)) & 1u; }
  void set(std::size_t i, bool positive);

  BitPlane reshaped(Shape dims) const;

  friend bool operator==(const BitPlane&, const BitPlane&) = default;

 private:
  Shape dims_;
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

inline std::size_t word_count(std::size_t bits) {
  return (bits + BitPlane::kWordBits - 1) / BitPlane::kWordBits;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace bnn
