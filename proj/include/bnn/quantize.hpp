#pragma once

#include <vector>

#include "bnn/kernels.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

/// Binarized view of a [C_out, C_in, kh, kw] weight tensor. `bits` and
/// `filter_scale` are derived from `shadow` and never updated on their own.
struct QuantizedWeights {
  BitPlane bits;
  std::vector<float> filter_scale;  // mean |w| per output filter
  FloatTensor shadow;

  std::size_t filters() const { return filter_scale.size(); }
};

// Mean of |w| over each output filter, accumulated in double.
template <typename T>
std::vector<T> filter_mean_abs(std::span<const T> w, std::size_t filters) {
  std::vector<T> scale(filters, T{0});
  if (filters == 0) return scale;
  const std::size_t per = w.size() / filters;
  for (std::size_t f = 0; f < filters; ++f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += w[f * per + i] < 0 ? -double(w[f * per + i]) : double(w[f * per + i]);
    scale[f] = per == 0 ? T{0} : static_cast<T>(acc / static_cast<double>(per));
  }
  return scale;
}

QuantizedWeights binarize_weights(FloatTensor w);

// Straight-through: the gradient w.r.t. the sign bits is passed to the shadow
// weights unchanged. With clip, entries where |w| > 1 are zeroed.
FloatTensor weight_grad_ste(const FloatTensor& upstream, const FloatTensor& shadow, bool clip = false);

BitPlane binarize_activations(const FloatTensor& x);

// Derivative of the polynomial sign surrogate: 2+2x on [-1,0), 2-2x on [0,1), 0 elsewhere.
template <typename T>
constexpr T sign_surrogate_slope(T x) {
  if (x >= T(-1) && x < T(0)) return T(2) + T(2) * x;
  if (x >= T(0) && x < T(1)) return T(2) - T(2) * x;
  return T(0);
}

FloatTensor activation_grad_poly(const FloatTensor& x, const FloatTensor& upstream);

}  // namespace bnn
