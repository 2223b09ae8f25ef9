#pragma once

// Straight-line reference implementations the optimized paths are checked against.

#include <cstdint>
#include <vector>

#include "bnn/tensor.hpp"

namespace naive {

inline float sign(float v) { return v >= 0.0f ? 1.0f : -1.0f; }

// Cross-correlation of ±1 floats, padding with `pad_value`.
inline std::vector<float> conv(const std::vector<float>& x, std::size_t C, std::size_t H, std::size_t W,
                               const std::vector<float>& w, std::size_t O, std::size_t KH, std::size_t KW,
                               std::size_t stride, std::size_t pad, float pad_value, std::size_t& OH,
                               std::size_t& OW) {
  OH = (H + 2 * pad - KH) / stride + 1;
  OW = (W + 2 * pad - KW) / stride + 1;
  std::vector<float> out(O * OH * OW);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t xx = 0; xx < OW; ++xx) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < KH; ++ky)
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const long iy = long(y * stride + ky) - long(pad);
              const long ix = long(xx * stride + kx) - long(pad);
              float v = pad_value;
              if (iy >= 0 && ix >= 0 && iy < long(H) && ix < long(W)) v = x[(c * H + std::size_t(iy)) * W + std::size_t(ix)];
              acc += v * w[((o * C + c) * KH + ky) * KW + kx];
            }
        out[(o * OH + y) * OW + xx] = acc;
      }
  return out;
}

}  // namespace naive
