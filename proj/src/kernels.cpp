#include "bnn/kernels.hpp"

#include <bit>
#include <cassert>
#include <cmath>
#include <limits>

namespace bnn {

namespace {

constexpr std::size_t kW = BitPlane::kWordBits;

std::uint64_t low_mask(std::size_t bits) {
  return bits >= kW ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits) - 1);
}

template <typename Get, typename Set>
void upsample_2d(const Shape& dims, std::size_t factor, Get get, Set set) {
  const std::size_t h = dims[dims.size() - 2];
  const std::size_t w = dims[dims.size() - 1];
  const std::size_t planes = h * w == 0 ? 0 : element_count(dims) / (h * w);
  const std::size_t oh = h * factor, ow = w * factor;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        set((p * oh + y) * ow + x, get((p * h + y / factor) * w + x / factor));
      }
    }
  }
}

Shape upsampled_dims(const Shape& dims, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("upsample factor must be >= 1");
  if (dims.size() < 2) throw ShapeError("upsampling needs at least two (spatial) dims, got " + shape_string(dims));
  Shape out = dims;
  out[out.size() - 2] *= factor;
  out[out.size() - 1] *= factor;
  return out;
}

template <typename T>
Tensor<T> upsample_dense(const Tensor<T>& t, std::size_t factor) {
  auto dims = upsampled_dims(t.dims(), factor);
  if (factor == 1) return t;
  auto out = Tensor<T>::zeros(std::move(dims));
  upsample_2d(t.dims(), factor, [&](std::size_t i) { return t[i]; }, [&](std::size_t i, T v) { out[i] = v; });
  return out;
}

}  // namespace

BitPlane pack_signs(std::span<const float> values, Shape dims) {
  if (element_count(dims) != values.size()) throw ShapeError("pack_signs: data does not match " + shape_string(dims));
  const std::size_t n = values.size();
  std::vector<std::uint64_t> words(word_count(n), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (values[i] >= 0.0f) words[i / kW] |= std::uint64_t{1} << (i % kW);
  }
  return BitPlane(std::move(dims), std::move(words));
}

BitPlane pack_signs(const FloatTensor& t) { return pack_signs(t.data(), t.dims()); }

FloatTensor unpack(const BitPlane& b) {
  auto out = FloatTensor::zeros(b.dims());
  for (std::size_t i = 0; i < b.size(); ++i) out[i] = b.get(i) ? 1.0f : -1.0f;
  return out;
}

std::int64_t xnor_popcount_dot(const BitPlane& a, const BitPlane& b) {
  if (a.size() != b.size()) {
    throw ShapeError("xnor_popcount_dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  const auto wa = a.words();
  const auto wb = b.words();
  std::int64_t matches = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    std::uint64_t x = ~(wa[i] ^ wb[i]);
    if (i + 1 == wa.size()) x &= low_mask(a.size() - i * kW);
    matches += std::popcount(x);
  }
  return 2 * matches - static_cast<std::int64_t>(a.size());
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw std::invalid_argument("convolution stride must be positive");
  if (kernel == 0 || kernel > in + 2 * pad) {
    throw ShapeError("kernel extent " + std::to_string(kernel) + " does not fit padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

IntTensor binary_conv2d(const BitPlane& input, const BitPlane& weights, const ConvGeometry& geom) {
  if (input.dims().size() != 3) throw ShapeError("binary_conv2d input must be [C,H,W], got " + shape_string(input.dims()));
  if (weights.dims().size() != 4) {
    throw ShapeError("binary_conv2d weights must be [C_out,C_in,kh,kw], got " + shape_string(weights.dims()));
  }
  const std::size_t c_in = input.dims()[0], h = input.dims()[1], w = input.dims()[2];
  const std::size_t c_out = weights.dims()[0], kh = weights.dims()[2], kw = weights.dims()[3];
  if (weights.dims()[1] != c_in) {
    throw ShapeError("binary_conv2d channel mismatch: input " + shape_string(input.dims()) + ", weights " +
                     shape_string(weights.dims()));
  }
  const std::size_t oh = conv_out_extent(h, kh, geom.stride, geom.pad);
  const std::size_t ow = conv_out_extent(w, kw, geom.stride, geom.pad);
  const std::size_t reduction = c_in * kh * kw;
  assert(reduction <= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max() / 2));

  // Re-pack so that each pixel's channel bits are contiguous words.
  const std::size_t cw = word_count(c_in);
  const std::size_t ph = h + 2 * geom.pad, pw = w + 2 * geom.pad;
  const std::uint64_t tail = low_mask(c_in - (cw - 1) * kW);
  const std::uint64_t pad_word = geom.pad_bit == PadBit::Positive ? ~std::uint64_t{0} : 0;
  std::vector<std::uint64_t> pix(ph * pw * cw);
  for (std::size_t y = 0; y < ph; ++y) {
    for (std::size_t x = 0; x < pw; ++x) {
      std::uint64_t* dst = &pix[(y * pw + x) * cw];
      const bool inside = y >= geom.pad && y < h + geom.pad && x >= geom.pad && x < w + geom.pad;
      for (std::size_t k = 0; k < cw; ++k) dst[k] = inside ? 0 : pad_word;
      if (!inside) continue;
      const std::size_t sy = y - geom.pad, sx = x - geom.pad;
      for (std::size_t c = 0; c < c_in; ++c) {
        if (input.get((c * h + sy) * w + sx)) dst[c / kW] |= std::uint64_t{1} << (c % kW);
      }
    }
  }
  std::vector<std::uint64_t> filt(c_out * kh * kw * cw, 0);
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          if (weights.get(((o * c_in + c) * kh + ky) * kw + kx)) {
            filt[((o * kh + ky) * kw + kx) * cw + c / kW] |= std::uint64_t{1} << (c % kW);
          }
        }
      }
    }
  }

  std::vector<std::int32_t> out(c_out * oh * ow);
  const auto m = static_cast<std::int32_t>(reduction);
  for (std::size_t o = 0; o < c_out; ++o) {
    const std::uint64_t* f = &filt[o * kh * kw * cw];
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::int32_t matches = 0;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::uint64_t* row = &pix[((oy * geom.stride + ky) * pw + ox * geom.stride) * cw];
          const std::uint64_t* frow = f + ky * kw * cw;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            for (std::size_t k = 0; k + 1 < cw; ++k) matches += std::popcount(~(row[kx * cw + k] ^ frow[kx * cw + k]));
            matches += std::popcount(~(row[kx * cw + cw - 1] ^ frow[kx * cw + cw - 1]) & tail);
          }
        }
        out[(o * oh + oy) * ow + ox] = 2 * matches - m;
      }
    }
  }
  return IntTensor({c_out, oh, ow}, std::move(out));
}

FloatTensor nn_upsample(const FloatTensor& t, std::size_t factor) { return upsample_dense(t, factor); }
IntTensor nn_upsample(const IntTensor& t, std::size_t factor) { return upsample_dense(t, factor); }

BitPlane nn_upsample(const BitPlane& t, std::size_t factor) {
  auto dims = upsampled_dims(t.dims(), factor);
  if (factor == 1) return t;
  BitPlane out(std::move(dims));
  upsample_2d(t.dims(), factor, [&](std::size_t i) { return t.get(i); }, [&](std::size_t i, bool v) { out.set(i, v); });
  return out;
}

FloatTensor hadamard_scale(const IntTensor& t, std::span<const float> scale) {
  if (t.rank() == 0 || t.dim(0) != scale.size()) {
    throw ShapeError("hadamard_scale: " + std::to_string(scale.size()) + " scales for tensor " + shape_string(t.dims()));
  }
  for (float s : scale) {
    if (!std::isfinite(s)) throw std::invalid_argument("hadamard_scale: non-finite scale");
  }
  auto out = FloatTensor::zeros(t.dims());
  const std::size_t per = scale.empty() ? 0 : t.size() / scale.size();
  for (std::size_t c = 0; c < scale.size(); ++c) {
    for (std::size_t i = 0; i < per; ++i) out[c * per + i] = scale[c] * static_cast<float>(t[c * per + i]);
  }
  return out;
}

}  // namespace bnn
