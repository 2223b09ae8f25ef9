#pragma once

// Multi-branch upsampling and binary attention as standalone inference layers.
// Tensors here are single images, [C,H,W].

#include <span>
#include <vector>

#include "bnn/attention.hpp"
#include "bnn/kernels.hpp"
#include "bnn/quantize.hpp"

namespace bnn {

std::vector<float> soft_gate(std::span<const float> logits);

// alpha_i * y_i + (1 - alpha_i) * sum_j y_j. The sum includes j = i unless exclude_self.
FloatTensor branch_mix(std::size_t i, std::span<const FloatTensor> ys, std::span<const float> alpha,
                       bool exclude_self = false);

// Scaled XNOR/popcount convolution of sign(x), before normalization.
FloatTensor binary_branch_conv(const FloatTensor& x, const QuantizedWeights& w, const ConvGeometry& geom = {});

FloatTensor merge_branches(std::span<const FloatTensor> xs, std::span<const float> lambda);

// y[c] = x[c] * scale[c] + shift[c]
FloatTensor channel_affine(const FloatTensor& x, std::span<const float> scale, std::span<const float> shift);

/// One binary conv followed by its (inference-folded) batch norm.
struct BranchConv {
  QuantizedWeights weights;
  std::vector<float> bn_scale;
  std::vector<float> bn_shift;
  ConvGeometry geom{1, 1, PadBit::Negative};

  FloatTensor operator()(const FloatTensor& x) const;
};

struct BranchParams {
  std::vector<BranchConv> first;   // C -> C at input resolution
  std::vector<BranchConv> second;  // C -> C_out after upsampling
  std::vector<float> gate_logits;
  std::vector<float> merge_logits;
  bool mixing = true;
  bool exclude_self = false;
  bool remix_each_conv = false;

  std::size_t branches() const { return first.size(); }
  std::vector<float> gates() const { return soft_gate(gate_logits); }
  std::vector<float> merge_weights() const { return soft_gate(merge_logits); }
  void validate() const;
};

/// Replicates x into K branches: conv, [attention], gate mix, nearest upsample,
/// conv, then the weighted merge.
FloatTensor multibranch_upsample_forward(const FloatTensor& x, const BranchParams& p, std::size_t factor,
                                         const AttentionMaps* maps = nullptr);

// Affinities between positions (over channels) and between channels (over
// positions) of sign(proj(a)), thresholded at tau.
AttentionMaps attention_maps(const FloatTensor& a, const QuantizedWeights& proj, double tau = 0.0);
// Same thresholding from an already projected C x M feature.
AttentionMaps attention_maps_from_projection(const FloatTensor& projected, double tau, bool binary = true);

// x + beta * (x S_p^T + S_c x); beta == 0 returns x unchanged.
FloatTensor attention_apply(const AttentionMaps& maps, const FloatTensor& x);

}  // namespace bnn
