#include "bnn/quantize.hpp"

#include <cmath>

namespace bnn {

QuantizedWeights binarize_weights(FloatTensor w) {
  if (w.rank() != 4) throw ShapeError("binarize_weights expects [C_out,C_in,kh,kw], got " + shape_string(w.dims()));
  QuantizedWeights q;
  q.bits = pack_signs(w);
  q.filter_scale = filter_mean_abs<float>(w.data(), w.dim(0));
  q.shadow = std::move(w);
  return q;
}

FloatTensor weight_grad_ste(const FloatTensor& upstream, const FloatTensor& shadow, bool clip) {
  require_same_shape(upstream.dims(), shadow.dims(), "weight_grad_ste");
  FloatTensor g = upstream;
  if (clip) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::fabs(shadow[i]) > 1.0f) g[i] = 0.0f;
    }
  }
  return g;
}

BitPlane binarize_activations(const FloatTensor& x) { return pack_signs(x); }

FloatTensor activation_grad_poly(const FloatTensor& x, const FloatTensor& upstream) {
  require_same_shape(x.dims(), upstream.dims(), "activation_grad_poly");
  auto out = FloatTensor::zeros(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = upstream[i] * sign_surrogate_slope(x[i]);
  return out;
}

}  // namespace bnn
