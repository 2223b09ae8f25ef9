#pragma once

// Forward builders for every op the tape knows. Spatial tensors are NCHW.

#include <cmath>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "bnn/autodiff.hpp"
#include "bnn/kernels.hpp"

namespace bnn::ops {

template <typename T> NodeRef add(Tape<T>& t, NodeRef a, NodeRef b);
template <typename T> NodeRef scale(Tape<T>& t, NodeRef a, T c);
template <typename T> NodeRef mul(Tape<T>& t, NodeRef a, NodeRef b);
// a: [m,k], b: [k,n]
template <typename T> NodeRef matmul(Tape<T>& t, NodeRef a, NodeRef b);
template <typename T> NodeRef sigmoid(Tape<T>& t, NodeRef a);
template <typename T> NodeRef relu(Tape<T>& t, NodeRef a);
template <typename T> NodeRef hardtanh(Tape<T>& t, NodeRef a);
template <typename T> NodeRef sum(Tape<T>& t, NodeRef a);

// Full-precision cross-correlation; x [N,C,H,W], w [O,C,kh,kw].
template <typename T> NodeRef conv2d(Tape<T>& t, NodeRef x, NodeRef w, const ConvAttrs& attrs);
// x [N,C,...] + b[c]
template <typename T> NodeRef channel_bias(Tape<T>& t, NodeRef x, NodeRef b);

struct BinaryConvOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
  PadBit pad_bit = PadBit::Negative;
  bool ste_clip = false;
  // Use the bit-packed XNOR/popcount kernel for the forward value (float only).
  // Results are identical to the GEMM route.
  bool packed = false;
};

/// y[n,o] = filter_scale[o] * (sign(w[o]) (*) sign(x[n])). Backward uses the
/// polynomial surrogate for sign(x) and straight-through for sign(w).
template <typename T> NodeRef binary_conv2d(Tape<T>& t, NodeRef x, NodeRef w, const BinaryConvOptions& opt);
template <typename T> NodeRef sign_activation(Tape<T>& t, NodeRef x);
template <typename T> NodeRef sign_weights(Tape<T>& t, NodeRef w, bool clip = false);

// Batch statistics when training (running stats updated), frozen running
// statistics otherwise. `stats` may be null for training-mode use without tracking.
template <typename T>
NodeRef batch_norm(Tape<T>& t, NodeRef x, NodeRef gamma, NodeRef beta, BatchNormStats* stats, bool training);

template <typename T> NodeRef upsample(Tape<T>& t, NodeRef x, std::size_t factor);
template <typename T> NodeRef avg_pool2(Tape<T>& t, NodeRef x);

// out = alpha_i * y_i + (1 - alpha_i) * sum_j y_j; with exclude_self the sum skips j = i.
template <typename T>
NodeRef branch_mix(Tape<T>& t, NodeRef alpha, std::span<const NodeRef> ys, std::size_t i, bool exclude_self = false);
// out = sum_i lambda_i * y_i
template <typename T> NodeRef weighted_sum(Tape<T>& t, NodeRef lambda, std::span<const NodeRef> ys);

// E = x + beta * (attention context of x), with one set of maps per batch item.
template <typename T>
NodeRef attention(Tape<T>& t, NodeRef x, NodeRef beta, std::shared_ptr<const std::vector<AttentionMaps>> maps);

// Mean pixelwise softmax cross-entropy; logits [N,C,H,W], labels N*H*W in [0,C).
template <typename T>
NodeRef softmax_cross_entropy(Tape<T>& t, NodeRef logits, std::shared_ptr<const std::vector<std::int32_t>> labels);

template <typename T>
NodeRef custom(Tape<T>& t, std::vector<NodeRef> inputs, Tensor<T> value, typename Node<T>::CustomBackward backward);

// Inference batch norm as y = x * scale + shift. Shared by the tape and the
// standalone layer paths so both round identically.
template <typename T>
std::pair<T, T> fold_batch_norm(T gamma, T beta, float mean, float var, double eps) {
  const T s = static_cast<T>(static_cast<double>(gamma) / std::sqrt(static_cast<double>(var) + eps));
  return {s, static_cast<T>(static_cast<double>(beta) - static_cast<double>(mean) * static_cast<double>(s))};
}

// Per-filter mean |w| used as the binary conv scale.
template <typename T> std::vector<T> binary_filter_scale(const Tensor<T>& w);

}  // namespace bnn::ops
