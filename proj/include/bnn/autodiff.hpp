#pragma once

// Reverse-mode differentiation over a fixed vocabulary of operations. A Tape is
// an append-only list of nodes; node i may only read nodes j < i, so append
// order is a topological order and backward is a single reverse sweep.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bnn/attention.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

struct NodeRef {
  std::size_t id = 0;
};

enum class OpKind : std::uint8_t {
  Input,
  Param,
  Add,
  Scale,
  Mul,
  MatMul,
  Sigmoid,
  Relu,
  HardTanh,
  Sum,
  Conv2d,
  ChannelBias,
  BinaryConv2d,
  SignActivation,
  SignWeights,
  BatchNorm,
  Upsample,
  AvgPool,
  BranchMix,
  WeightedSum,
  Attention,
  SoftmaxCrossEntropy,
  Custom,
};

const char* op_name(OpKind op);

// Ops whose forward contains sign(): their backward is a surrogate, not a derivative.
constexpr bool is_binarizer(OpKind op) {
  return op == OpKind::BinaryConv2d || op == OpKind::SignActivation || op == OpKind::SignWeights;
}

/// Named trainable slots with gradient accumulators and Adam moments.
template <typename T>
class ParamStore {
 public:
  struct Slot {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
  };

  std::size_t add(std::string name, Tensor<T> init);
  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;

  Slot& slot(std::size_t i) { return slots_.at(i); }
  const Slot& slot(std::size_t i) const { return slots_.at(i); }
  Slot& operator[](std::string_view name) { return slots_[index(name)]; }
  const Slot& operator[](std::string_view name) const { return slots_[index(name)]; }

  std::size_t size() const { return slots_.size(); }
  std::size_t parameter_count() const;
  auto begin() { return slots_.begin(); }
  auto end() { return slots_.end(); }
  auto begin() const { return slots_.begin(); }
  auto end() const { return slots_.end(); }

  void zero_grad();
  void reset_moments();

 private:
  std::vector<Slot> slots_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over every slot of a store; step() consumes the accumulated gradients.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore<T>& params);
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  double learning_rate() const { return cfg_.learning_rate; }
  std::uint64_t steps() const { return t_; }
  void reset() { t_ = 0; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

struct ConvAttrs {
  std::size_t stride = 1;
  std::size_t pad = 0;
  double pad_value = 0.0;
};

// Running statistics of one batch-norm layer, updated by training-mode forwards.
struct BatchNormStats {
  std::vector<float> mean;
  std::vector<float> var;
  double momentum = 0.9;  // weight kept by the running average
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, 0.0f), var(channels, 1.0f) {}
};

template <typename T>
struct Node {
  using CustomBackward = std::function<void(const Tensor<T>& grad_out, std::vector<Tensor<T>>& grad_inputs)>;

  OpKind op = OpKind::Input;
  std::vector<std::size_t> inputs;
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into this node
  std::vector<Tensor<T>> saved;

  std::size_t param = 0;
  std::size_t index = 0;
  std::size_t factor = 1;
  T scalar = T(0);
  bool flag = false;
  ConvAttrs conv;
  std::vector<T> coeffs;
  std::shared_ptr<const std::vector<AttentionMaps>> maps;
  std::shared_ptr<const std::vector<std::int32_t>> labels;
  CustomBackward custom;
};

template <typename T>
class Tape {
 public:
  explicit Tape(ParamStore<T>* params = nullptr) : params_(params) {}

  NodeRef input(Tensor<T> value);
  NodeRef param(std::size_t slot);
  NodeRef param(std::string_view name);

  // Appends a node. Every input must already be on the tape.
  NodeRef record(Node<T> node);
  NodeRef record(OpKind op, std::vector<NodeRef> inputs, Tensor<T> value);

  const Node<T>& node(NodeRef r) const;
  const Tensor<T>& value(NodeRef r) const { return node(r).value; }
  // Gradient reaching a node after backward(); zeros if none did.
  Tensor<T> grad(NodeRef r) const;
  std::size_t size() const { return nodes_.size(); }
  ParamStore<T>* params() const { return params_; }

  bool contains_binarizer() const;
  std::size_t count(OpKind op) const;

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse, adding
  /// parameter gradients into the store's accumulators.
  void backward(NodeRef loss);

  // Gradient contributions a single node sends to its inputs for a given
  // upstream gradient. Used by the surrogate checks.
  std::vector<Tensor<T>> input_gradients(NodeRef r, const Tensor<T>& upstream) const;

 private:
  void accumulate(std::size_t id, const Tensor<T>& g);

  ParamStore<T>* params_;
  std::vector<Node<T>> nodes_;
};

// ---------------------------------------------------------------------------
// Gradient checking.

enum class GradCheckMode {
  FiniteDifference,  // central differences; binarizers are rejected
  Surrogate,         // each binarizer's backward vs its closed form
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "slot[index]" or node id of the worst entry
};

// Builds a scalar loss from the params of the store it is handed.
using Subgraph = std::function<NodeRef(Tape<double>&)>;

/// Checks the analytic gradients of `graph` at the store's current values.
/// Relative error is |a - n| / max(|a|, |n|), with entries below 1e-7 in both
/// estimates compared absolutely.
GradCheckReport grad_check(const Subgraph& graph, ParamStore<double>& point, double eps, double tol,
                           GradCheckMode mode = GradCheckMode::FiniteDifference);

}  // namespace bnn
