#include "bnn/ops.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "bnn/quantize.hpp"
#include "op_backward.hpp"

namespace bnn::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
T sign_of(T v) {
  return v >= T(0) ? T(1) : T(-1);
}

struct ConvShape {
  std::size_t n, c, h, w, o, kh, kw, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

ConvShape conv_shape(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
  if (x.size() != 4) throw ShapeError("conv input must be [N,C,H,W], got " + shape_string(x));
  if (w.size() != 4) throw ShapeError("conv weights must be [O,C,kh,kw], got " + shape_string(w));
  if (w[1] != x[1]) throw ShapeError("conv channel mismatch: input " + shape_string(x) + ", weights " + shape_string(w));
  ConvShape s{x[0], x[1], x[2], x[3], w[0], w[2], w[3], 0, 0};
  s.oh = conv_out_extent(s.h, s.kh, stride, pad);
  s.ow = conv_out_extent(s.w, s.kw, stride, pad);
  return s;
}

// col[(ci*kh+ky)*kw+kx][oy*ow+ox] = f(x[ci, oy*s+ky-p, ox*s+kx-p]), pad_value outside.
template <typename T, typename F>
void im2col(const T* x, const ConvShape& s, const ConvAttrs& a, T* col, F f) {
  const T pad_value = static_cast<T>(a.pad_value);
  const std::size_t px = s.pixels();
  for (std::size_t ci = 0; ci < s.c; ++ci) {
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        T* row = col + ((ci * s.kh + ky) * s.kw + kx) * px;
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * a.stride + ky) - static_cast<std::ptrdiff_t>(a.pad);
          const bool row_in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(s.h);
          for (std::size_t ox = 0; ox < s.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * a.stride + kx) - static_cast<std::ptrdiff_t>(a.pad);
            row[oy * s.ow + ox] = row_in && ix >= 0 && ix < static_cast<std::ptrdiff_t>(s.w)
                                      ? f(x[(ci * s.h + iy) * s.w + ix])
                                      : pad_value;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvShape& s, const ConvAttrs& a, T* gx) {
  const std::size_t px = s.pixels();
  for (std::size_t ci = 0; ci < s.c; ++ci) {
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        const T* row = col + ((ci * s.kh + ky) * s.kw + kx) * px;
        for (std::size_t oy = 0; oy < s.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * a.stride + ky) - static_cast<std::ptrdiff_t>(a.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t ox = 0; ox < s.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * a.stride + kx) - static_cast<std::ptrdiff_t>(a.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            gx[(ci * s.h + iy) * s.w + ix] += row[oy * s.ow + ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvShape& s, const ConvAttrs& a) {
  return s.kh == 1 && s.kw == 1 && a.stride == 1 && a.pad == 0;
}

ConvAttrs binary_attrs(const BinaryConvOptions& opt) {
  return ConvAttrs{opt.stride, opt.pad, opt.pad_bit == PadBit::Positive ? 1.0 : -1.0};
}

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, T (*f)(T)) {
  auto out = Tensor<T>::zeros(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename T>
T sigmoid_fn(T v) {
  return T(1) / (T(1) + std::exp(-v));
}
template <typename T>
T relu_fn(T v) {
  return v > T(0) ? v : T(0);
}
template <typename T>
T hardtanh_fn(T v) {
  return v < T(-1) ? T(-1) : (v > T(1) ? T(1) : v);
}

template <typename T>
std::size_t spatial_per_channel(const Shape& d) {
  std::size_t p = 1;
  for (std::size_t i = 2; i < d.size(); ++i) p *= d[i];
  return p;
}

}  // namespace

template <typename T>
std::vector<T> binary_filter_scale(const Tensor<T>& w) {
  return filter_mean_abs<T>(w.data(), w.rank() ? w.dim(0) : 0);
}

template <typename T>
NodeRef add(Tape<T>& t, NodeRef a, NodeRef b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  require_same_shape(va.dims(), vb.dims(), "add");
  auto out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return t.record(OpKind::Add, {a, b}, std::move(out));
}

template <typename T>
NodeRef scale(Tape<T>& t, NodeRef a, T c) {
  auto out = t.value(a);
  for (auto& v : out.data()) v *= c;
  Node<T> n;
  n.op = OpKind::Scale;
  n.inputs = {a.id};
  n.value = std::move(out);
  n.scalar = c;
  return t.record(std::move(n));
}

template <typename T>
NodeRef mul(Tape<T>& t, NodeRef a, NodeRef b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  require_same_shape(va.dims(), vb.dims(), "mul");
  auto out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return t.record(OpKind::Mul, {a, b}, std::move(out));
}

template <typename T>
NodeRef matmul(Tape<T>& t, NodeRef a, NodeRef b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0)) {
    throw ShapeError("matmul: " + shape_string(va.dims()) + " x " + shape_string(vb.dims()));
  }
  const auto m = static_cast<Eigen::Index>(va.dim(0)), k = static_cast<Eigen::Index>(va.dim(1)),
             n = static_cast<Eigen::Index>(vb.dim(1));
  auto out = Tensor<T>::zeros({va.dim(0), vb.dim(1)});
  Eigen::Map<RowMat<T>>(out.raw(), m, n).noalias() =
      Eigen::Map<const RowMat<T>>(va.raw(), m, k) * Eigen::Map<const RowMat<T>>(vb.raw(), k, n);
  return t.record(OpKind::MatMul, {a, b}, std::move(out));
}

template <typename T>
NodeRef sigmoid(Tape<T>& t, NodeRef a) {
  return t.record(OpKind::Sigmoid, {a}, elementwise<T>(t.value(a), &sigmoid_fn<T>));
}

template <typename T>
NodeRef relu(Tape<T>& t, NodeRef a) {
  return t.record(OpKind::Relu, {a}, elementwise<T>(t.value(a), &relu_fn<T>));
}

template <typename T>
NodeRef hardtanh(Tape<T>& t, NodeRef a) {
  return t.record(OpKind::HardTanh, {a}, elementwise<T>(t.value(a), &hardtanh_fn<T>));
}

template <typename T>
NodeRef sum(Tape<T>& t, NodeRef a) {
  double acc = 0.0;
  for (T v : t.value(a).data()) acc += static_cast<double>(v);
  return t.record(OpKind::Sum, {a}, Tensor<T>({1}, {static_cast<T>(acc)}));
}

template <typename T>
NodeRef conv2d(Tape<T>& t, NodeRef x, NodeRef w, const ConvAttrs& attrs) {
  const auto& vx = t.value(x);
  const auto& vw = t.value(w);
  const ConvShape s = conv_shape(vx.dims(), vw.dims(), attrs.stride, attrs.pad);
  auto out = Tensor<T>::zeros({s.n, s.o, s.oh, s.ow});
  const auto O = static_cast<Eigen::Index>(s.o), P = static_cast<Eigen::Index>(s.patch()),
             X = static_cast<Eigen::Index>(s.pixels());
  Eigen::Map<const RowMat<T>> wm(vw.raw(), O, P);
  std::vector<T> col(is_pointwise(s, attrs) ? 0 : s.patch() * s.pixels());
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* xn = vx.raw() + n * s.c * s.h * s.w;
    const T* cp = xn;
    if (!col.empty()) {
      im2col(xn, s, attrs, col.data(), [](T v) { return v; });
      cp = col.data();
    }
    Eigen::Map<RowMat<T>>(out.raw() + n * s.o * s.pixels(), O, X).noalias() = wm * Eigen::Map<const RowMat<T>>(cp, P, X);
  }
  Node<T> node;
  node.op = OpKind::Conv2d;
  node.inputs = {x.id, w.id};
  node.value = std::move(out);
  node.conv = attrs;
  return t.record(std::move(node));
}

template <typename T>
NodeRef channel_bias(Tape<T>& t, NodeRef x, NodeRef b) {
  const auto& vx = t.value(x);
  const auto& vb = t.value(b);
  if (vx.rank() < 2 || vb.size() != vx.dim(1)) {
    throw ShapeError("channel_bias: " + shape_string(vb.dims()) + " for " + shape_string(vx.dims()));
  }
  auto out = vx;
  const std::size_t per = spatial_per_channel<T>(vx.dims());
  for (std::size_t n = 0; n < vx.dim(0); ++n)
    for (std::size_t c = 0; c < vx.dim(1); ++c)
      for (std::size_t i = 0; i < per; ++i) out[(n * vx.dim(1) + c) * per + i] += vb[c];
  return t.record(OpKind::ChannelBias, {x, b}, std::move(out));
}

template <typename T>
NodeRef binary_conv2d(Tape<T>& t, NodeRef x, NodeRef w, const BinaryConvOptions& opt) {
  const auto& vx = t.value(x);
  const auto& vw = t.value(w);
  const ConvAttrs attrs = binary_attrs(opt);
  const ConvShape s = conv_shape(vx.dims(), vw.dims(), attrs.stride, attrs.pad);
  const std::vector<T> alpha = binary_filter_scale(vw);
  auto out = Tensor<T>::zeros({s.n, s.o, s.oh, s.ow});

  bool done = false;
  if constexpr (std::is_same_v<T, float>) {
    if (opt.packed) {
      const BitPlane wb = pack_signs(vw);
      const ConvGeometry geom{opt.stride, opt.pad, opt.pad_bit};
      const std::size_t in_sz = s.c * s.h * s.w, out_sz = s.o * s.pixels();
      for (std::size_t n = 0; n < s.n; ++n) {
        const BitPlane xb = pack_signs(vx.data().subspan(n * in_sz, in_sz), {s.c, s.h, s.w});
        const FloatTensor y = hadamard_scale(binary_conv2d(xb, wb, geom), alpha);
        std::copy(y.raw(), y.raw() + out_sz, out.raw() + n * out_sz);
      }
      done = true;
    }
  }
  if (!done) {
    const auto O = static_cast<Eigen::Index>(s.o), P = static_cast<Eigen::Index>(s.patch()),
               X = static_cast<Eigen::Index>(s.pixels());
    RowMat<T> ws(O, P);
    for (Eigen::Index i = 0; i < O * P; ++i) ws.data()[i] = sign_of(vw[static_cast<std::size_t>(i)]);
    std::vector<T> col(s.patch() * s.pixels());
    for (std::size_t n = 0; n < s.n; ++n) {
      im2col(vx.raw() + n * s.c * s.h * s.w, s, attrs, col.data(), [](T v) { return sign_of(v); });
      Eigen::Map<RowMat<T>> y(out.raw() + n * s.o * s.pixels(), O, X);
      y.noalias() = ws * Eigen::Map<const RowMat<T>>(col.data(), P, X);
      for (Eigen::Index o = 0; o < O; ++o) y.row(o) *= alpha[static_cast<std::size_t>(o)];
    }
  }
  Node<T> node;
  node.op = OpKind::BinaryConv2d;
  node.inputs = {x.id, w.id};
  node.value = std::move(out);
  node.conv = attrs;
  node.flag = opt.ste_clip;
  node.coeffs = alpha;
  return t.record(std::move(node));
}

template <typename T>
NodeRef sign_activation(Tape<T>& t, NodeRef x) {
  return t.record(OpKind::SignActivation, {x}, elementwise<T>(t.value(x), &sign_of<T>));
}

template <typename T>
NodeRef sign_weights(Tape<T>& t, NodeRef w, bool clip) {
  Node<T> node;
  node.op = OpKind::SignWeights;
  node.inputs = {w.id};
  node.value = elementwise<T>(t.value(w), &sign_of<T>);
  node.flag = clip;
  return t.record(std::move(node));
}

template <typename T>
NodeRef batch_norm(Tape<T>& t, NodeRef x, NodeRef gamma, NodeRef beta, BatchNormStats* stats, bool training) {
  const auto& vx = t.value(x);
  const auto& vg = t.value(gamma);
  const auto& vb = t.value(beta);
  if (vx.rank() < 2 || vg.size() != vx.dim(1) || vb.size() != vx.dim(1)) {
    throw ShapeError("batch_norm: affine of " + shape_string(vg.dims()) + " for " + shape_string(vx.dims()));
  }
  const std::size_t N = vx.dim(0), C = vx.dim(1), per = spatial_per_channel<T>(vx.dims());
  const double eps = stats ? stats->eps : 1e-5;
  if (!training && !stats) throw ContractError("batch_norm in inference mode needs running statistics");
  if (stats && stats->mean.size() != C) throw ShapeError("batch_norm: running statistics channel mismatch");
  auto out = Tensor<T>::zeros(vx.dims());
  Node<T> node;
  node.op = OpKind::BatchNorm;
  node.inputs = {x.id, gamma.id, beta.id};
  node.flag = training;
  if (training) {
    auto xhat = Tensor<T>::zeros(vx.dims());
    node.coeffs.assign(C, T(0));
    const double count = static_cast<double>(N * per);
    for (std::size_t c = 0; c < C; ++c) {
      double mean = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < per; ++i) mean += vx[(n * C + c) * per + i];
      mean /= count;
      double var = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < per; ++i) {
          const double d = vx[(n * C + c) * per + i] - mean;
          var += d * d;
        }
      var /= count;
      const double inv = 1.0 / std::sqrt(var + eps);
      node.coeffs[c] = static_cast<T>(inv);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < per; ++i) {
          const std::size_t k = (n * C + c) * per + i;
          xhat[k] = static_cast<T>((vx[k] - mean) * inv);
          out[k] = vg[c] * xhat[k] + vb[c];
        }
      if (stats) {
        const double m = stats->momentum;
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        stats->mean[c] = static_cast<float>(m * stats->mean[c] + (1 - m) * mean);
        stats->var[c] = static_cast<float>(m * stats->var[c] + (1 - m) * unbiased);
      }
    }
    node.saved.push_back(std::move(xhat));
  } else {
    // coeffs = [scale(C), running mean(C), 1/sqrt(var+eps)(C)]
    node.coeffs.assign(3 * C, T(0));
    for (std::size_t c = 0; c < C; ++c) {
      const auto [s, b] = fold_batch_norm<T>(vg[c], vb[c], stats->mean[c], stats->var[c], eps);
      node.coeffs[c] = s;
      node.coeffs[C + c] = static_cast<T>(stats->mean[c]);
      node.coeffs[2 * C + c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats->var[c]) + eps));
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < per; ++i) {
          const std::size_t k = (n * C + c) * per + i;
          out[k] = vx[k] * s + b;
        }
    }
  }
  node.value = std::move(out);
  return t.record(std::move(node));
}

template <typename T>
NodeRef upsample(Tape<T>& t, NodeRef x, std::size_t factor) {
  const auto& vx = t.value(x);
  if (factor == 0) throw std::invalid_argument("upsample factor must be >= 1");
  Shape d = vx.dims();
  if (d.size() < 2) throw ShapeError("upsample needs spatial dims");
  const std::size_t h = d[d.size() - 2], w = d[d.size() - 1];
  d[d.size() - 2] *= factor;
  d[d.size() - 1] *= factor;
  auto out = Tensor<T>::zeros(d);
  const std::size_t planes = h * w != 0 ? vx.size() / (h * w) : 0, oh = h * factor, ow = w * factor;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = vx[(p * h + y / factor) * w + xx / factor];
  Node<T> node;
  node.op = OpKind::Upsample;
  node.inputs = {x.id};
  node.value = std::move(out);
  node.factor = factor;
  return t.record(std::move(node));
}

template <typename T>
NodeRef avg_pool2(Tape<T>& t, NodeRef x) {
  const auto& vx = t.value(x);
  Shape d = vx.dims();
  if (d.size() < 2 || d[d.size() - 2] % 2 || d[d.size() - 1] % 2) {
    throw ShapeError("avg_pool2 needs even spatial dims, got " + shape_string(d));
  }
  const std::size_t h = d[d.size() - 2], w = d[d.size() - 1];
  d[d.size() - 2] /= 2;
  d[d.size() - 1] /= 2;
  auto out = Tensor<T>::zeros(d);
  const std::size_t planes = vx.size() / (h * w), oh = h / 2, ow = w / 2;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* r0 = vx.raw() + (p * h + 2 * y) * w + 2 * xx;
        const T* r1 = r0 + w;
        out[(p * oh + y) * ow + xx] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  return t.record(OpKind::AvgPool, {x}, std::move(out));
}

template <typename T>
NodeRef branch_mix(Tape<T>& t, NodeRef alpha, std::span<const NodeRef> ys, std::size_t i, bool exclude_self) {
  const auto& va = t.value(alpha);
  if (ys.empty() || va.size() != ys.size() || i >= ys.size()) {
    throw ShapeError("branch_mix: " + std::to_string(va.size()) + " gates for " + std::to_string(ys.size()) + " branches");
  }
  const auto& yi = t.value(ys[i]);
  auto total = Tensor<T>::zeros(yi.dims());
  for (std::size_t j = 0; j < ys.size(); ++j) {
    const auto& yj = t.value(ys[j]);
    require_same_shape(yj.dims(), yi.dims(), "branch_mix");
    if (exclude_self && j == i) continue;
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += yj[k];
  }
  const T a = va[i];
  auto out = Tensor<T>::zeros(yi.dims());
  auto diff = Tensor<T>::zeros(yi.dims());
  // A lone branch mixed with itself is itself for any gate.
  const bool lone = ys.size() == 1 && !exclude_self;
  for (std::size_t k = 0; k < out.size(); ++k) {
    diff[k] = lone ? T(0) : yi[k] - total[k];
    out[k] = lone ? yi[k] : a * yi[k] + (T(1) - a) * total[k];
  }
  Node<T> node;
  node.op = OpKind::BranchMix;
  node.inputs.push_back(alpha.id);
  for (auto y : ys) node.inputs.push_back(y.id);
  node.value = std::move(out);
  node.index = i;
  node.flag = exclude_self;
  node.saved.push_back(std::move(diff));
  return t.record(std::move(node));
}

template <typename T>
NodeRef weighted_sum(Tape<T>& t, NodeRef lambda, std::span<const NodeRef> ys) {
  const auto& vl = t.value(lambda);
  if (ys.empty() || vl.size() != ys.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(vl.size()) + " weights for " + std::to_string(ys.size()) + " inputs");
  }
  auto out = Tensor<T>::zeros(t.value(ys[0]).dims());
  for (std::size_t j = 0; j < ys.size(); ++j) {
    const auto& y = t.value(ys[j]);
    require_same_shape(y.dims(), out.dims(), "weighted_sum");
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += vl[j] * y[k];
  }
  Node<T> node;
  node.op = OpKind::WeightedSum;
  node.inputs.push_back(lambda.id);
  for (auto y : ys) node.inputs.push_back(y.id);
  node.value = std::move(out);
  return t.record(std::move(node));
}

template <typename T>
NodeRef attention(Tape<T>& t, NodeRef x, NodeRef beta, std::shared_ptr<const std::vector<AttentionMaps>> maps) {
  const auto& vx = t.value(x);
  const auto& vb = t.value(beta);
  if (vb.size() != 1) throw ShapeError("attention: beta must be a scalar");
  if (vx.rank() != 4 || !maps || maps->size() != vx.dim(0)) throw ShapeError("attention: one map set per batch item required");
  const std::size_t C = vx.dim(1), M = vx.dim(2) * vx.dim(3);
  auto ctx = Tensor<T>::zeros(vx.dims());
  for (std::size_t n = 0; n < vx.dim(0); ++n) {
    const auto& m = (*maps)[n];
    if (m.channels != C || m.positions != M) throw ShapeError("attention: maps do not match feature " + shape_string(vx.dims()));
    attention_context(m, vx.raw() + n * C * M, ctx.raw() + n * C * M);
  }
  const T b = vb[0];
  auto out = vx;
  if (b != T(0)) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += b * ctx[k];
  }
  Node<T> node;
  node.op = OpKind::Attention;
  node.inputs = {x.id, beta.id};
  node.value = std::move(out);
  node.maps = std::move(maps);
  node.saved.push_back(std::move(ctx));
  return t.record(std::move(node));
}

template <typename T>
NodeRef softmax_cross_entropy(Tape<T>& t, NodeRef logits, std::shared_ptr<const std::vector<std::int32_t>> labels) {
  const auto& v = t.value(logits);
  if (v.rank() != 4) throw ShapeError("softmax_cross_entropy: logits must be [N,C,H,W]");
  const std::size_t N = v.dim(0), C = v.dim(1), P = v.dim(2) * v.dim(3);
  if (!labels || labels->size() != N * P) throw ShapeError("softmax_cross_entropy: label count mismatch");
  auto prob = Tensor<T>::zeros(v.dims());
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const auto lab = (*labels)[n * P + p];
      if (lab < 0 || static_cast<std::size_t>(lab) >= C) throw DataError("label " + std::to_string(lab) + " out of range");
      double mx = v[(n * C) * P + p];
      for (std::size_t c = 1; c < C; ++c) mx = std::max<double>(mx, v[(n * C + c) * P + p]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) z += std::exp(v[(n * C + c) * P + p] - mx);
      for (std::size_t c = 0; c < C; ++c) prob[(n * C + c) * P + p] = static_cast<T>(std::exp(v[(n * C + c) * P + p] - mx) / z);
      loss += std::log(z) + mx - v[(n * C + static_cast<std::size_t>(lab)) * P + p];
    }
  }
  Node<T> node;
  node.op = OpKind::SoftmaxCrossEntropy;
  node.inputs = {logits.id};
  node.value = Tensor<T>::zeros({1});
  node.value[0] = static_cast<T>(loss / static_cast<double>(N * P));
  node.labels = std::move(labels);
  node.saved.push_back(std::move(prob));
  return t.record(std::move(node));
}

template <typename T>
NodeRef custom(Tape<T>& t, std::vector<NodeRef> inputs, Tensor<T> value, typename Node<T>::CustomBackward backward) {
  Node<T> node;
  node.op = OpKind::Custom;
  for (auto r : inputs) node.inputs.push_back(r.id);
  node.value = std::move(value);
  node.custom = std::move(backward);
  return t.record(std::move(node));
}

}  // namespace bnn::ops

namespace bnn::detail {

using ops::RowMat;

template <typename T>
std::vector<Tensor<T>> backward_node(const Tape<T>& tape, const Node<T>& node, const Tensor<T>& g) {
  std::vector<Tensor<T>> grads(node.inputs.size());
  auto in = [&](std::size_t k) -> const Tensor<T>& { return tape.value(NodeRef{node.inputs[k]}); };

  switch (node.op) {
    case OpKind::Input:
    case OpKind::Param:
      break;
    case OpKind::Add:
      grads[0] = g;
      grads[1] = g;
      break;
    case OpKind::Scale: {
      grads[0] = g;
      for (auto& v : grads[0].data()) v *= node.scalar;
      break;
    }
    case OpKind::Mul: {
      grads[0] = g;
      grads[1] = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        grads[0][i] *= in(1)[i];
        grads[1][i] *= in(0)[i];
      }
      break;
    }
    case OpKind::MatMul: {
      const auto& a = in(0);
      const auto& b = in(1);
      const auto m = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
                 n = static_cast<Eigen::Index>(b.dim(1));
      Eigen::Map<const RowMat<T>> gm(g.raw(), m, n);
      grads[0] = Tensor<T>::zeros(a.dims());
      grads[1] = Tensor<T>::zeros(b.dims());
      Eigen::Map<RowMat<T>>(grads[0].raw(), m, k).noalias() = gm * Eigen::Map<const RowMat<T>>(b.raw(), k, n).transpose();
      Eigen::Map<RowMat<T>>(grads[1].raw(), k, n).noalias() = Eigen::Map<const RowMat<T>>(a.raw(), m, k).transpose() * gm;
      break;
    }
    case OpKind::Sigmoid: {
      grads[0] = g;
      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] *= node.value[i] * (T(1) - node.value[i]);
      break;
    }
    case OpKind::Relu: {
      grads[0] = g;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(in(0)[i] > T(0))) grads[0][i] = T(0);
      break;
    }
    case OpKind::HardTanh: {
      grads[0] = g;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (in(0)[i] < T(-1) || in(0)[i] > T(1)) grads[0][i] = T(0);
      break;
    }
    case OpKind::Sum:
      grads[0] = Tensor<T>::filled(in(0).dims(), g[0]);
      break;
    case OpKind::Conv2d:
    case OpKind::BinaryConv2d: {
      const bool binary = node.op == OpKind::BinaryConv2d;
      const auto& x = in(0);
      const auto& w = in(1);
      const auto s = ops::conv_shape(x.dims(), w.dims(), node.conv.stride, node.conv.pad);
      const auto O = static_cast<Eigen::Index>(s.o), P = static_cast<Eigen::Index>(s.patch()),
                 X = static_cast<Eigen::Index>(s.pixels());
      RowMat<T> wm(O, P);
      for (Eigen::Index i = 0; i < O * P; ++i) {
        const T v = w[static_cast<std::size_t>(i)];
        wm.data()[i] = binary ? ops::sign_of(v) : v;
      }
      RowMat<T> gw = RowMat<T>::Zero(O, P);
      grads[0] = Tensor<T>::zeros(x.dims());
      const bool pointwise = !binary && ops::is_pointwise(s, node.conv);
      std::vector<T> col(s.patch() * s.pixels()), gcol(s.patch() * s.pixels());
      RowMat<T> gscaled;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* xn = x.raw() + n * s.c * s.h * s.w;
        T* gxn = grads[0].raw() + n * s.c * s.h * s.w;
        Eigen::Map<const RowMat<T>> gn(g.raw() + n * s.o * s.pixels(), O, X);
        const T* cp = xn;
        if (binary) {
          ops::im2col(xn, s, node.conv, col.data(), [](T v) { return ops::sign_of(v); });
          cp = col.data();
          gscaled = gn;
          for (Eigen::Index o = 0; o < O; ++o) gscaled.row(o) *= node.coeffs[static_cast<std::size_t>(o)];
        } else if (!pointwise) {
          ops::im2col(xn, s, node.conv, col.data(), [](T v) { return v; });
          cp = col.data();
        }
        const auto& gy = binary ? static_cast<const RowMat<T>&>(gscaled) : RowMat<T>(gn);
        gw.noalias() += gy * Eigen::Map<const RowMat<T>>(cp, P, X).transpose();
        if (pointwise) {
          Eigen::Map<RowMat<T>>(gxn, P, X).noalias() = wm.transpose() * gy;
        } else {
          Eigen::Map<RowMat<T>>(gcol.data(), P, X).noalias() = wm.transpose() * gy;
          ops::col2im(gcol.data(), s, node.conv, gxn);
        }
      }
      if (binary) {
        const std::size_t per = s.c * s.h * s.w;
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t i = 0; i < per; ++i) grads[0][n * per + i] *= sign_surrogate_slope(x[n * per + i]);
      }
      grads[1] = Tensor<T>::zeros(w.dims());
      std::copy(gw.data(), gw.data() + gw.size(), grads[1].raw());
      if (binary && node.flag) {
        for (std::size_t i = 0; i < w.size(); ++i)
          if (std::abs(w[i]) > T(1)) grads[1][i] = T(0);
      }
      break;
    }
    case OpKind::ChannelBias: {
      grads[0] = g;
      const auto& x = in(0);
      const std::size_t C = x.dim(1), per = ops::spatial_per_channel<T>(x.dims());
      grads[1] = Tensor<T>::zeros({C});
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < x.dim(0); ++n)
          for (std::size_t i = 0; i < per; ++i) acc += g[(n * C + c) * per + i];
        grads[1][c] = static_cast<T>(acc);
      }
      break;
    }
    case OpKind::SignActivation: {
      grads[0] = g;
      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] *= sign_surrogate_slope(in(0)[i]);
      break;
    }
    case OpKind::SignWeights: {
      grads[0] = g;
      if (node.flag) {
        for (std::size_t i = 0; i < g.size(); ++i)
          if (std::abs(in(0)[i]) > T(1)) grads[0][i] = T(0);
      }
      break;
    }
    case OpKind::BatchNorm: {
      const auto& x = in(0);
      const auto& gamma = in(1);
      const std::size_t N = x.dim(0), C = x.dim(1), per = ops::spatial_per_channel<T>(x.dims());
      grads[0] = Tensor<T>::zeros(x.dims());
      grads[1] = Tensor<T>::zeros({C});
      grads[2] = Tensor<T>::zeros({C});
      for (std::size_t c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < per; ++i) {
            const std::size_t k = (n * C + c) * per + i;
            const double xh = node.flag ? double(node.saved[0][k])
                                        : (double(x[k]) - double(node.coeffs[C + c])) * double(node.coeffs[2 * C + c]);
            sum_g += g[k];
            sum_gx += double(g[k]) * xh;
          }
        grads[1][c] = static_cast<T>(sum_gx);
        grads[2][c] = static_cast<T>(sum_g);
        if (node.flag) {
          const double count = static_cast<double>(N * per);
          const double k1 = double(gamma[c]) * double(node.coeffs[c]) / count;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < per; ++i) {
              const std::size_t k = (n * C + c) * per + i;
              grads[0][k] = static_cast<T>(k1 * (count * g[k] - sum_g - double(node.saved[0][k]) * sum_gx));
            }
        } else {
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < per; ++i) {
              const std::size_t k = (n * C + c) * per + i;
              grads[0][k] = g[k] * node.coeffs[c];
            }
        }
      }
      break;
    }
    case OpKind::Upsample: {
      const auto& x = in(0);
      const auto& d = x.dims();
      const std::size_t h = d[d.size() - 2], w = d[d.size() - 1], f = node.factor;
      const std::size_t oh = h * f, ow = w * f, planes = h * w != 0 ? x.size() / (h * w) : 0;
      grads[0] = Tensor<T>::zeros(d);
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) grads[0][(p * h + y / f) * w + xx / f] += g[(p * oh + y) * ow + xx];
      break;
    }
    case OpKind::AvgPool: {
      const auto& x = in(0);
      const auto& d = x.dims();
      const std::size_t h = d[d.size() - 2], w = d[d.size() - 1], oh = h / 2, ow = w / 2, planes = x.size() / (h * w);
      grads[0] = Tensor<T>::zeros(d);
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx) grads[0][(p * h + y) * w + xx] = g[(p * oh + y / 2) * ow + xx / 2] * T(0.25);
      break;
    }
    case OpKind::BranchMix: {
      const std::size_t K = node.inputs.size() - 1, i = node.index;
      const T a = in(0)[i];
      grads[0] = Tensor<T>::zeros({K});
      double ga = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) ga += double(g[k]) * double(node.saved[0][k]);
      grads[0][i] = static_cast<T>(ga);
      for (std::size_t j = 0; j < K; ++j) {
        T coef;
        if (j == i) {
          coef = node.flag ? a : T(1);
        } else {
          coef = T(1) - a;
        }
        grads[j + 1] = g;
        for (auto& v : grads[j + 1].data()) v *= coef;
      }
      break;
    }
    case OpKind::WeightedSum: {
      const std::size_t K = node.inputs.size() - 1;
      const auto& lam = in(0);
      grads[0] = Tensor<T>::zeros({K});
      for (std::size_t j = 0; j < K; ++j) {
        const auto& y = in(j + 1);
        double acc = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) acc += double(g[k]) * double(y[k]);
        grads[0][j] = static_cast<T>(acc);
        grads[j + 1] = g;
        for (auto& v : grads[j + 1].data()) v *= lam[j];
      }
      break;
    }
    case OpKind::Attention: {
      const auto& x = in(0);
      const T b = in(1)[0];
      const std::size_t C = x.dim(1), M = x.dim(2) * x.dim(3);
      grads[0] = g;
      if (b != T(0)) {
        auto adj = Tensor<T>::zeros(x.dims());
        for (std::size_t n = 0; n < x.dim(0); ++n) attention_context_adjoint((*node.maps)[n], g.raw() + n * C * M, adj.raw() + n * C * M);
        for (std::size_t k = 0; k < adj.size(); ++k) grads[0][k] += b * adj[k];
      }
      double gb = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) gb += double(g[k]) * double(node.saved[0][k]);
      grads[1] = Tensor<T>({1}, {static_cast<T>(gb)});
      break;
    }
    case OpKind::SoftmaxCrossEntropy: {
      const auto& prob = node.saved[0];
      const std::size_t N = prob.dim(0), C = prob.dim(1), P = prob.dim(2) * prob.dim(3);
      const T k = g[0] / static_cast<T>(N * P);
      grads[0] = prob;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < P; ++p) grads[0][(n * C + static_cast<std::size_t>((*node.labels)[n * P + p])) * P + p] -= T(1);
      for (auto& v : grads[0].data()) v *= k;
      break;
    }
    case OpKind::Custom:
      node.custom(g, grads);
      break;
  }
  return grads;
}

template std::vector<Tensor<float>> backward_node(const Tape<float>&, const Node<float>&, const Tensor<float>&);
template std::vector<Tensor<double>> backward_node(const Tape<double>&, const Node<double>&, const Tensor<double>&);

}  // namespace bnn::detail

namespace bnn::ops {

#define BNN_INSTANTIATE_OPS(T)                                                                                   \
  template std::vector<T> binary_filter_scale(const Tensor<T>&);                                                 \
  template NodeRef add(Tape<T>&, NodeRef, NodeRef);                                                              \
  template NodeRef scale(Tape<T>&, NodeRef, T);                                                                  \
  template NodeRef mul(Tape<T>&, NodeRef, NodeRef);                                                              \
  template NodeRef matmul(Tape<T>&, NodeRef, NodeRef);                                                           \
  template NodeRef sigmoid(Tape<T>&, NodeRef);                                                                   \
  template NodeRef relu(Tape<T>&, NodeRef);                                                                      \
  template NodeRef hardtanh(Tape<T>&, NodeRef);                                                                  \
  template NodeRef sum(Tape<T>&, NodeRef);                                                                       \
  template NodeRef conv2d(Tape<T>&, NodeRef, NodeRef, const ConvAttrs&);                                         \
  template NodeRef channel_bias(Tape<T>&, NodeRef, NodeRef);                                                     \
  template NodeRef binary_conv2d(Tape<T>&, NodeRef, NodeRef, const BinaryConvOptions&);                          \
  template NodeRef sign_activation(Tape<T>&, NodeRef);                                                           \
  template NodeRef sign_weights(Tape<T>&, NodeRef, bool);                                                        \
  template NodeRef batch_norm(Tape<T>&, NodeRef, NodeRef, NodeRef, BatchNormStats*, bool);                       \
  template NodeRef upsample(Tape<T>&, NodeRef, std::size_t);                                                     \
  template NodeRef avg_pool2(Tape<T>&, NodeRef);                                                                 \
  template NodeRef branch_mix(Tape<T>&, NodeRef, std::span<const NodeRef>, std::size_t, bool);                   \
  template NodeRef weighted_sum(Tape<T>&, NodeRef, std::span<const NodeRef>);                                    \
  template NodeRef attention(Tape<T>&, NodeRef, NodeRef, std::shared_ptr<const std::vector<AttentionMaps>>);     \
  template NodeRef softmax_cross_entropy(Tape<T>&, NodeRef, std::shared_ptr<const std::vector<std::int32_t>>);   \
  template NodeRef custom(Tape<T>&, std::vector<NodeRef>, Tensor<T>, typename Node<T>::CustomBackward);

BNN_INSTANTIATE_OPS(float)
BNN_INSTANTIATE_OPS(double)

#undef BNN_INSTANTIATE_OPS

}  // namespace bnn::ops
