#pragma once

#include <vector>

#include "bnn/autodiff.hpp"

namespace bnn::detail {

// Gradients a node passes to each of its inputs (empty tensor = none).
template <typename T>
std::vector<Tensor<T>> backward_node(const Tape<T>& tape, const Node<T>& node, const Tensor<T>& g);

}  // namespace bnn::detail
