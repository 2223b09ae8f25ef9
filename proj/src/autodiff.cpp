#include "bnn/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "bnn/errors.hpp"
#include "bnn/quantize.hpp"
#include "op_backward.hpp"

namespace bnn {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Mul: return "mul";
    case OpKind::MatMul: return "matmul";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::HardTanh: return "hardtanh";
    case OpKind::Sum: return "sum";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::ChannelBias: return "channel_bias";
    case OpKind::BinaryConv2d: return "binary_conv2d";
    case OpKind::SignActivation: return "sign_activation";
    case OpKind::SignWeights: return "sign_weights";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::Upsample: return "upsample";
    case OpKind::AvgPool: return "avg_pool";
    case OpKind::BranchMix: return "branch_mix";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::Attention: return "attention";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::Custom: return "custom";
  }
  return "?";
}

template <typename T>
std::size_t ParamStore<T>::add(std::string name, Tensor<T> init) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  Slot s;
  s.grad = Tensor<T>::zeros(init.dims());
  s.m = Tensor<T>::zeros(init.dims());
  s.v = Tensor<T>::zeros(init.dims());
  s.name = std::move(name);
  s.value = std::move(init);
  slots_.push_back(std::move(s));
  return slots_.size() - 1;
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return std::any_of(slots_.begin(), slots_.end(), [&](const Slot& s) { return s.name == name; });
}

template <typename T>
std::size_t ParamStore<T>::index(std::string_view name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].name == name) return i;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& s : slots_) std::fill(s.grad.data().begin(), s.grad.data().end(), T(0));
}

template <typename T>
void ParamStore<T>::reset_moments() {
  for (auto& s : slots_) {
    std::fill(s.m.data().begin(), s.m.data().end(), T(0));
    std::fill(s.v.data().begin(), s.v.data().end(), T(0));
  }
}

template <typename T>
void Adam<T>::step(ParamStore<T>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T lr = static_cast<T>(cfg_.learning_rate * std::sqrt(c2) / c1);
  const T eps = static_cast<T>(cfg_.epsilon * std::sqrt(c2));
  for (auto& s : params) {
    for (std::size_t i = 0; i < s.value.size(); ++i) {
      const T g = s.grad[i];
      s.m[i] = b1 * s.m[i] + (T(1) - b1) * g;
      s.v[i] = b2 * s.v[i] + (T(1) - b2) * g * g;
      s.value[i] -= lr * s.m[i] / (std::sqrt(s.v[i]) + eps);
    }
  }
}

template <typename T>
NodeRef Tape<T>::input(Tensor<T> value) {
  Node<T> n;
  n.op = OpKind::Input;
  n.value = std::move(value);
  return record(std::move(n));
}

template <typename T>
NodeRef Tape<T>::param(std::size_t slot) {
  if (!params_) throw ContractError("tape has no parameter store");
  Node<T> n;
  n.op = OpKind::Param;
  n.value = params_->slot(slot).value;
  n.param = slot;
  return record(std::move(n));
}

template <typename T>
NodeRef Tape<T>::param(std::string_view name) {
  if (!params_) throw ContractError("tape has no parameter store");
  return param(params_->index(name));
}

template <typename T>
NodeRef Tape<T>::record(Node<T> node) {
  for (auto id : node.inputs) {
    if (id >= nodes_.size()) throw GraphError("node input " + std::to_string(id) + " is not on the tape");
  }
  nodes_.push_back(std::move(node));
  return NodeRef{nodes_.size() - 1};
}

template <typename T>
NodeRef Tape<T>::record(OpKind op, std::vector<NodeRef> inputs, Tensor<T> value) {
  Node<T> n;
  n.op = op;
  for (auto r : inputs) n.inputs.push_back(r.id);
  n.value = std::move(value);
  return record(std::move(n));
}

template <typename T>
const Node<T>& Tape<T>::node(NodeRef r) const {
  if (r.id >= nodes_.size()) throw GraphError("node " + std::to_string(r.id) + " is not on the tape");
  return nodes_[r.id];
}

template <typename T>
Tensor<T> Tape<T>::grad(NodeRef r) const {
  const auto& n = node(r);
  return n.grad.size() == n.value.size() && !n.grad.dims().empty() ? n.grad : Tensor<T>::zeros(n.value.dims());
}

template <typename T>
bool Tape<T>::contains_binarizer() const {
  return std::any_of(nodes_.begin(), nodes_.end(), [](const Node<T>& n) { return is_binarizer(n.op); });
}

template <typename T>
std::size_t Tape<T>::count(OpKind op) const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [&](const Node<T>& n) { return n.op == op; }));
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const Tensor<T>& g) {
  auto& n = nodes_[id];
  if (g.dims() != n.value.dims()) {
    throw ShapeError(std::string("gradient ") + shape_string(g.dims()) + " for " + op_name(n.op) + " node of " +
                     shape_string(n.value.dims()));
  }
  if (n.grad.dims().empty()) {
    n.grad = g;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }
}

template <typename T>
void Tape<T>::backward(NodeRef loss) {
  const auto& l = node(loss);
  if (l.value.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_string(l.value.dims()));
  for (auto& n : nodes_) n.grad = Tensor<T>();
  accumulate(loss.id, Tensor<T>::filled(l.value.dims(), T(1)));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.grad.dims().empty()) continue;
    if (n.op == OpKind::Param) {
      if (params_) {
        auto& slot = params_->slot(n.param);
        for (std::size_t k = 0; k < slot.grad.size(); ++k) slot.grad[k] += n.grad[k];
      }
      continue;
    }
    if (n.inputs.empty()) continue;
    auto grads = detail::backward_node(*this, n, n.grad);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!grads[k].dims().empty()) accumulate(n.inputs[k], grads[k]);
    }
    // Interior gradients are dropped as soon as they have been propagated.
    if (n.op != OpKind::Input) n.saved.clear();
  }
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::input_gradients(NodeRef r, const Tensor<T>& upstream) const {
  const auto& n = node(r);
  require_same_shape(upstream.dims(), n.value.dims(), "input_gradients");
  return detail::backward_node(*this, n, upstream);
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Adam<float>;
template class Adam<double>;
template class Tape<float>;
template class Tape<double>;

namespace {

struct Comparison {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;

  void add(double a, double n, const std::string& where) {
    const double scale = std::max(std::abs(a), std::abs(n));
    const double err = scale < 1e-7 ? std::abs(a - n) : std::abs(a - n) / scale;
    ++checked;
    if (err > max_rel || !std::isfinite(err)) {
      max_rel = std::isfinite(err) ? err : HUGE_VAL;
      worst = where;
    }
  }
};

double sgn(double v) { return v >= 0.0 ? 1.0 : -1.0; }

// Deterministic upstream pattern in [-1, 1].
Tensor<double> probe(const Shape& dims, std::size_t salt) {
  auto t = Tensor<double>::zeros(dims);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::size_t k = (i * 2654435761u + salt * 40503u) % 2001;
    t[i] = static_cast<double>(k) / 1000.0 - 1.0;
  }
  return t;
}

double poly_slope(double x) {
  if (x < -1.0 || x >= 1.0) return 0.0;
  return x < 0.0 ? 2.0 + 2.0 * x : 2.0 - 2.0 * x;
}

// Direct-loop surrogate gradients of a binary convolution.
void binary_conv_reference(const Tensor<double>& x, const Tensor<double>& w, const ConvAttrs& a, bool clip,
                           const Tensor<double>& g, Tensor<double>& gx, Tensor<double>& gw) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3), OH = g.dim(2), OW = g.dim(3);
  gx = Tensor<double>::zeros(x.dims());
  gw = Tensor<double>::zeros(w.dims());
  for (std::size_t o = 0; o < O; ++o) {
    double alpha = 0.0;
    for (std::size_t k = 0; k < C * KH * KW; ++k) alpha += std::abs(w[o * C * KH * KW + k]);
    alpha /= static_cast<double>(C * KH * KW);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          const double go = alpha * g[((n * O + o) * OH + oy) * OW + ox];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = long(oy * a.stride + ky) - long(a.pad);
                const long ix = long(ox * a.stride + kx) - long(a.pad);
                const std::size_t wi = ((o * C + c) * KH + ky) * KW + kx;
                const bool inside = iy >= 0 && ix >= 0 && iy < long(H) && ix < long(W);
                const std::size_t xi = inside ? ((n * C + c) * H + std::size_t(iy)) * W + std::size_t(ix) : 0;
                const double xs = inside ? sgn(x[xi]) : a.pad_value;
                gw[wi] += go * xs;
                if (inside) gx[xi] += go * sgn(w[wi]) * poly_slope(x[xi]);
              }
        }
  }
  if (clip)
    for (std::size_t i = 0; i < w.size(); ++i)
      if (std::abs(w[i]) > 1.0) gw[i] = 0.0;
}

void compare(Comparison& cmp, const Tensor<double>& analytic, const Tensor<double>& expected, const std::string& tag) {
  for (std::size_t i = 0; i < analytic.size(); ++i) cmp.add(analytic[i], expected[i], tag + "[" + std::to_string(i) + "]");
}

}  // namespace

GradCheckReport grad_check(const Subgraph& graph, ParamStore<double>& point, double eps, double tol, GradCheckMode mode) {
  Comparison cmp;
  Tape<double> tape(&point);
  const NodeRef loss = graph(tape);

  if (mode == GradCheckMode::FiniteDifference) {
    if (tape.contains_binarizer()) {
      throw ContractError("finite differences are meaningless through sign(); use the surrogate check");
    }
    point.zero_grad();
    tape.backward(loss);
    for (std::size_t s = 0; s < point.size(); ++s) {
      auto& slot = point.slot(s);
      const auto analytic = slot.grad;
      for (std::size_t i = 0; i < slot.value.size(); ++i) {
        const double orig = slot.value[i];
        slot.value[i] = orig + eps;
        Tape<double> up(&point);
        const double fp = up.value(graph(up))[0];
        slot.value[i] = orig - eps;
        Tape<double> down(&point);
        const double fm = down.value(graph(down))[0];
        slot.value[i] = orig;
        cmp.add(analytic[i], (fp - fm) / (2.0 * eps), slot.name + "[" + std::to_string(i) + "]");
      }
    }
    point.zero_grad();
  } else {
    for (std::size_t id = 0; id < tape.size(); ++id) {
      const auto& n = tape.node(NodeRef{id});
      if (!is_binarizer(n.op)) continue;
      const auto upstream = probe(n.value.dims(), id);
      const auto grads = tape.input_gradients(NodeRef{id}, upstream);
      const auto& x = tape.value(NodeRef{n.inputs[0]});
      const std::string tag = std::string(op_name(n.op)) + "#" + std::to_string(id);
      if (n.op == OpKind::SignActivation) {
        auto expected = Tensor<double>::zeros(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i) expected[i] = upstream[i] * poly_slope(x[i]);
        compare(cmp, grads[0], expected, tag);
      } else if (n.op == OpKind::SignWeights) {
        auto expected = upstream;
        if (n.flag)
          for (std::size_t i = 0; i < x.size(); ++i)
            if (std::abs(x[i]) > 1.0) expected[i] = 0.0;
        compare(cmp, grads[0], expected, tag);
      } else {
        Tensor<double> gx, gw;
        binary_conv_reference(x, tape.value(NodeRef{n.inputs[1]}), n.conv, n.flag, upstream, gx, gw);
        compare(cmp, grads[0], gx, tag + ".x");
        compare(cmp, grads[1], gw, tag + ".w");
      }
    }
  }

  GradCheckReport r;
  r.max_rel_error = cmp.max_rel;
  r.checked = cmp.checked;
  r.worst = cmp.worst;
  r.passed = cmp.checked > 0 && cmp.max_rel <= tol;
  return r;
}

}  // namespace bnn
