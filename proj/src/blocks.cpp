#include "bnn/blocks.hpp"

#include <bit>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "bnn/errors.hpp"

namespace bnn {

std::vector<float> soft_gate(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw std::invalid_argument("gate logit is not finite");
    out[i] = 1.0f / (1.0f + std::exp(-logits[i]));
  }
  return out;
}

FloatTensor branch_mix(std::size_t i, std::span<const FloatTensor> ys, std::span<const float> alpha, bool exclude_self) {
  if (ys.empty() || alpha.size() != ys.size() || i >= ys.size()) {
    throw ShapeError("branch_mix: " + std::to_string(alpha.size()) + " gates for " + std::to_string(ys.size()) + " branches");
  }
  const FloatTensor& yi = ys[i];
  auto total = FloatTensor::zeros(yi.dims());
  for (std::size_t j = 0; j < ys.size(); ++j) {
    require_same_shape(ys[j].dims(), yi.dims(), "branch_mix");
    if (exclude_self && j == i) continue;
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += ys[j][k];
  }
  if (ys.size() == 1 && !exclude_self) return yi;
  const float a = alpha[i];
  auto out = FloatTensor::zeros(yi.dims());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a * yi[k] + (1.0f - a) * total[k];
  return out;
}

FloatTensor binary_branch_conv(const FloatTensor& x, const QuantizedWeights& w, const ConvGeometry& geom) {
  return hadamard_scale(binary_conv2d(pack_signs(x), w.bits, geom), w.filter_scale);
}

FloatTensor merge_branches(std::span<const FloatTensor> xs, std::span<const float> lambda) {
  if (xs.empty() || lambda.size() != xs.size()) {
    throw ShapeError("merge_branches: " + std::to_string(lambda.size()) + " weights for " + std::to_string(xs.size()) +
                     " inputs");
  }
  auto out = FloatTensor::zeros(xs[0].dims());
  for (std::size_t j = 0; j < xs.size(); ++j) {
    require_same_shape(xs[j].dims(), out.dims(), "merge_branches");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += lambda[j] * xs[j][k];
  }
  return out;
}

FloatTensor channel_affine(const FloatTensor& x, std::span<const float> scale, std::span<const float> shift) {
  if (x.rank() == 0 || scale.size() != x.dim(0) || shift.size() != x.dim(0)) {
    throw ShapeError("channel_affine: " + std::to_string(scale.size()) + " channels for " + shape_string(x.dims()));
  }
  auto out = x;
  const std::size_t per = x.size() / x.dim(0);
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < per; ++i) out[c * per + i] = x[c * per + i] * scale[c] + shift[c];
  return out;
}

FloatTensor BranchConv::operator()(const FloatTensor& x) const {
  return channel_affine(binary_branch_conv(x, weights, geom), bn_scale, bn_shift);
}

void BranchParams::validate() const {
  const std::size_t k = first.size();
  if (k == 0) throw ContractError("a multi-branch block needs at least one branch");
  if (second.size() != k || gate_logits.size() != k || merge_logits.size() != k) {
    throw ShapeError("branch parameter lists disagree on the branch count");
  }
}

FloatTensor multibranch_upsample_forward(const FloatTensor& x, const BranchParams& p, std::size_t factor,
                                         const AttentionMaps* maps) {
  p.validate();
  if (factor == 0) throw std::invalid_argument("upsample factor must be >= 1");
  const std::size_t k = p.branches();
  const auto alpha = p.gates();
  const auto lambda = p.merge_weights();

  std::vector<FloatTensor> ys;
  ys.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    FloatTensor y = p.first[i](x);
    if (maps) y = attention_apply(*maps, y);
    ys.push_back(std::move(y));
  }
  std::vector<FloatTensor> zs;
  zs.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const FloatTensor mixed = p.mixing ? branch_mix(i, ys, alpha, p.exclude_self) : ys[i];
    zs.push_back(p.second[i](nn_upsample(mixed, factor)));
  }
  if (p.mixing && p.remix_each_conv) {
    std::vector<FloatTensor> mixed;
    mixed.reserve(k);
    for (std::size_t i = 0; i < k; ++i) mixed.push_back(branch_mix(i, zs, alpha, p.exclude_self));
    zs = std::move(mixed);
  }
  return merge_branches(zs, lambda);
}

namespace {

// out[a*n+b] = [dot(v_a, v_b) >= tau] for n packed rows of `bits` signs each,
// `words` apart. Pad bits are zero in every row, so the xor popcount counts
// exactly the mismatches.
void threshold_gram(const std::vector<std::uint64_t>& flat, std::size_t n, std::size_t bits, double tau,
                    std::vector<std::uint8_t>& out) {
  const std::size_t words = word_count(bits);
  for (std::size_t a = 0; a < n; ++a) {
    const std::uint64_t* wa = flat.data() + a * words;
    for (std::size_t b = a; b < n; ++b) {
      const std::uint64_t* wb = flat.data() + b * words;
      std::int64_t diff = 0;
      for (std::size_t w = 0; w < words; ++w) diff += std::popcount(wa[w] ^ wb[w]);
      const std::uint8_t on = static_cast<double>(static_cast<std::int64_t>(bits) - 2 * diff) >= tau ? 1 : 0;
      out[a * n + b] = on;
      out[b * n + a] = on;
    }
  }
}

void threshold_gram(const Eigen::MatrixXd& v, double tau, std::vector<std::uint8_t>& out) {
  const Eigen::MatrixXd g = v.transpose() * v;
  const auto n = g.rows();
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) out[static_cast<std::size_t>(a * n + b)] = g(a, b) >= tau ? 1 : 0;
}

}  // namespace

AttentionMaps attention_maps_from_projection(const FloatTensor& projected, double tau, bool binary) {
  if (projected.rank() != 3) throw ShapeError("attention maps need a [C,H,W] feature, got " + shape_string(projected.dims()));
  const std::size_t C = projected.dim(0), M = projected.dim(1) * projected.dim(2);
  AttentionMaps maps;
  maps.channels = C;
  maps.positions = M;
  maps.spatial.assign(M * M, 0);
  maps.channel.assign(C * C, 0);
  const float* v = projected.raw();
  if (binary) {
    // Rows: channels over positions. Columns: positions over channels.
    const std::size_t row_words = word_count(M), col_words = word_count(C);
    std::vector<std::uint64_t> rows(C * row_words, 0), cols(M * col_words, 0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < M; ++m) {
        if (!(v[c * M + m] >= 0.0f)) continue;
        rows[c * row_words + m / 64] |= std::uint64_t{1} << (m % 64);
        cols[m * col_words + c / 64] |= std::uint64_t{1} << (c % 64);
      }
    threshold_gram(cols, M, C, tau, maps.spatial);
    threshold_gram(rows, C, M, tau, maps.channel);
  } else {
    Eigen::MatrixXd cm(C, M);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < M; ++m) cm(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(m)) = v[c * M + m];
    threshold_gram(cm, tau, maps.spatial);
    const Eigen::MatrixXd mc = cm.transpose();
    threshold_gram(mc, tau, maps.channel);
  }
  return maps;
}

AttentionMaps attention_maps(const FloatTensor& a, const QuantizedWeights& proj, double tau) {
  return attention_maps_from_projection(binary_branch_conv(a, proj), tau, true);
}

FloatTensor attention_apply(const AttentionMaps& maps, const FloatTensor& x) {
  if (x.rank() != 3 || x.dim(0) != maps.channels || x.dim(1) * x.dim(2) != maps.positions) {
    throw ShapeError("attention maps for " + std::to_string(maps.channels) + "x" + std::to_string(maps.positions) +
                     " applied to " + shape_string(x.dims()));
  }
  if (maps.beta == 0.0f) return x;
  auto ctx = FloatTensor::zeros(x.dims());
  attention_context(maps, x.raw(), ctx.raw());
  auto out = x;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += maps.beta * ctx[k];
  return out;
}

}  // namespace bnn
