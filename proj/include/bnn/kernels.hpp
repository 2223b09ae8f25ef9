#pragma once

#include <cstdint>
#include <span>

#include "bnn/tensor.hpp"

namespace bnn {

// Value injected at convolution borders, as a sign bit.
enum class PadBit : std::uint8_t { Negative = 0, Positive = 1 };

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
  PadBit pad_bit = PadBit::Negative;
};

// sign(x) with sign(0) = +1, bit set for +1.
BitPlane pack_signs(std::span<const float> values, Shape dims);
BitPlane pack_signs(const FloatTensor& t);
FloatTensor unpack(const BitPlane& b);

// ±1 inner product of two equally long planes: 2 * popcount(xnor) - M.
std::int64_t xnor_popcount_dot(const BitPlane& a, const BitPlane& b);

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Cross-correlation of a [C_in,H,W] sign plane with [C_out,C_in,kh,kw] filters.
/// Each output is the exact ±1 dot product of the padded window with a filter,
/// so |out| <= C_in*kh*kw.
IntTensor binary_conv2d(const BitPlane& input, const BitPlane& weights, const ConvGeometry& geom);

// Replicates every element of the trailing two (spatial) dims into a
// factor x factor block. Leading dims are untouched.
FloatTensor nn_upsample(const FloatTensor& t, std::size_t factor);
IntTensor nn_upsample(const IntTensor& t, std::size_t factor);
BitPlane nn_upsample(const BitPlane& t, std::size_t factor);

// out[c,...] = scale[c] * t[c,...]
FloatTensor hadamard_scale(const IntTensor& t, std::span<const float> scale);

}  // namespace bnn
