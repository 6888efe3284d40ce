#include "tzlab/tape.hpp"

#include "tzlab/error.hpp"

namespace tzlab {

Var Tape::leaf(Tensor value, bool trainable) {
  if (!value.all_finite()) throw NumericError("tape: leaf value contains NaN or Inf");
  Node node;
  node.value = std::move(value);
  node.requires_grad = trainable;
  node.trainable_leaf = trainable;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward, const char* op) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": result contains NaN or Inf");
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) throw ShapeError(std::string(op) + ": input recorded on a different tape");
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var output) {
  if (value(output).size() != 1) {
    throw ShapeError("backward: output must be a single element, got shape " +
                     shape_to_string(value(output).shape()));
  }
  backward(output, Tensor(value(output).shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (seed.shape() != value(output).shape()) {
    throw ShapeError("backward: seed shape " + shape_to_string(seed.shape()) + " does not match output " +
                     shape_to_string(value(output).shape()));
  }
  for (auto& n : nodes_) n.grad.reset();
  if (!nodes_[output.id].requires_grad) return;
  nodes_[output.id].grad = seed;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad || !node.backward) continue;
    // Nothing is recorded during backward, so node references stay valid.
    node.backward(*this, *node.grad, node.value);
    // Intermediate gradients are dropped once propagated.
    if (!node.trainable_leaf) node.grad.reset();
  }
}

std::optional<Tensor> Tape::grad(Var v) const {
  const Node& node = nodes_[v.id];
  if (!node.requires_grad || !node.grad) return std::nullopt;
  return node.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v.id];
  if (!node.requires_grad) return;
  if (g.shape() != node.value.shape()) {
    throw ShapeError("backward: gradient shape " + shape_to_string(g.shape()) + " does not match value " +
                     shape_to_string(node.value.shape()));
  }
  if (!node.grad) {
    node.grad = g;
    return;
  }
  double* dst = node.grad->data();
  const double* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Tensor& Tape::grad_buffer(Var v) {
  Node& node = nodes_[v.id];
  if (!node.grad) node.grad = Tensor(node.value.shape(), 0.0);
  return *node.grad;
}

void Tape::note_branch(std::uint64_t bits) noexcept {
  if (!track_branches_) return;
  signature_ ^= bits;
  signature_ *= 1099511628211ull;
}

}  // namespace tzlab
