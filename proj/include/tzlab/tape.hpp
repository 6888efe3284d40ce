#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <vector>

#include "tzlab/tensor.hpp"

namespace tzlab {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Ordered record of executed operations. Replaying the recorded adjoints in
/// reverse yields the gradient of a scalar output with respect to every leaf
/// registered as trainable.
///
/// A tape is single-owner; build one per forward/backward pass.
class Tape {
 public:
  /// Receives the accumulated gradient of the node's output and the output
  /// value itself; pushes input gradients through accumulate().
  using Backward = std::function<void(Tape&, const Tensor& grad_out, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool trainable);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an operation result. The value must be finite; `op` names the
  /// operation in the error otherwise.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward, const char* op);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(output)/d(output) = 1; output must hold a single element.
  void backward(Var output);
  void backward(Var output, const Tensor& seed);

  /// Gradient reached by the last backward pass; empty for frozen values.
  std::optional<Tensor> grad(Var v) const;

  void accumulate(Var v, const Tensor& g);
  /// Zero-initialised gradient buffer for in-place accumulation.
  Tensor& grad_buffer(Var v);

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Non-smooth operations (relu, max pooling) fold their branch decisions
  /// into this signature while tracking is on. Two forward passes with equal
  /// signatures took the same piecewise-linear branch everywhere.
  void set_branch_tracking(bool on) noexcept { track_branches_ = on; }
  bool branch_tracking() const noexcept { return track_branches_; }
  void note_branch(std::uint64_t bits) noexcept;
  std::uint64_t branch_signature() const noexcept { return signature_; }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    bool trainable_leaf = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  bool track_branches_ = false;
  std::uint64_t signature_ = 1469598103934665603ull;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace tzlab
