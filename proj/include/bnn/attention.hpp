#pragma once

#include <cstdint>
#include <vector>

namespace bnn {

/// Binary attention maps for one feature of C channels over M = H*W positions.
/// `spatial` is M x M and `channel` is C x C, row-major, every entry 0 or 1.
/// Row sums are the normalizers applied when the maps are used (a zero row
/// passes its product through unscaled).
struct AttentionMaps {
  std::size_t channels = 0;
  std::size_t positions = 0;
  std::vector<std::uint8_t> spatial;
  std::vector<std::uint8_t> channel;
  float beta = 0.0f;

  std::vector<double> spatial_row_scale() const;
  std::vector<double> channel_row_scale() const;
};

// context = x * (diag(rs_p) S_p)^T + diag(rs_c) S_c * x, x viewed as C x M.
template <typename T>
void attention_context(const AttentionMaps& maps, const T* x, T* context);

// Adjoint of attention_context: grad_x += g * diag(rs_p) S_p + S_c^T diag(rs_c) g.
template <typename T>
void attention_context_adjoint(const AttentionMaps& maps, const T* g, T* grad_x);

}  // namespace bnn
