#include "bnn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace bnn {

std::size_t element_count(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
  if (element_count(dims_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(dims_));
  }
  if constexpr (std::is_floating_point_v<T>) {
    for (T v : data_) {
      if (!std::isfinite(v)) throw NonFiniteError("tensor contains a non-finite value");
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape dims) {
  return filled(std::move(dims), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape dims, T value) {
  Tensor t;
  t.data_.assign(element_count(dims), value);
  t.dims_ = std::move(dims);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape dims) const {
  Tensor t = *this;
  t.reshape(std::move(dims));
  return t;
}

template <typename T>
void Tensor<T>::reshape(Shape dims) {
  if (element_count(dims) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
  }
  dims_ = std::move(dims);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<std::int32_t>;

BitPlane::BitPlane(Shape dims) : dims_(std::move(dims)), size_(element_count(dims_)), words_(word_count(size_), 0) {}

BitPlane::BitPlane(Shape dims, std::vector<std::uint64_t> words)
    : dims_(std::move(dims)), size_(element_count(dims_)), words_(std::move(words)) {
  if (words_.size() != word_count(size_)) {
    throw ShapeError("bit plane of " + std::to_string(size_) + " elements needs " +
                     std::to_string(word_count(size_)) + " words, got " + std::to_string(words_.size()));
  }
  const std::size_t tail = size_ % kWordBits;
  if (tail != 0 && (words_.back() >> tail) != 0) {
    throw std::invalid_argument("bit plane pad bits must be zero");
  }
}

void BitPlane::set(std::size_t i, bool positive) {
  const std::uint64_t mask = std::uint64_t{1} << (i % kWordBits);
  if (positive) {
    words_[i / kWordBits] |= mask;
  } else {
    words_[i / kWordBits] &= ~mask;
  }
}

BitPlane BitPlane::reshaped(Shape dims) const {
  if (element_count(dims) != size_) {
    throw ShapeError("cannot reshape bit plane " + shape_string(dims_) + " to " + shape_string(dims));
  }
  BitPlane b = *this;
  b.dims_ = std::move(dims);
  return b;
}

}  // namespace bnn
