#pragma once

// Named parameters and the building blocks shared by the fusion modules and
// the networks.

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tzlab/gradcheck.hpp"
#include "tzlab/ops.hpp"

namespace tzlab {

/// Ordered named tensors. Trainable tensors keep insertion order; batch-norm
/// running statistics live beside them under the norm layer's name.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  /// gamma = 1, beta = 0 as "<name>.gamma" / "<name>.beta", plus running
  /// statistics under "<name>".
  void add_batch_norm(const std::string& name, std::size_t channels);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  BatchNormState& bn_state(const std::string& name);
  const BatchNormState& bn_state(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  const std::vector<std::string>& bn_names() const { return bn_order_; }

  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  bool all_finite() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> tensors_;
  std::vector<std::string> bn_order_;
  std::map<std::string, BatchNormState> bn_;
};

/// Binds a ParamStore to a tape for one forward pass. Parameters become
/// leaves on first use; bind() injects existing leaves instead (gradient
/// checks drive parameters through their own leaves).
class Forward {
 public:
  Forward(Tape& tape, ParamStore& store, BatchNormOptions bn = {}, bool trainable = true)
      : tape_(tape), store_(store), bn_(bn), trainable_(trainable) {}

  Tape& tape() { return tape_; }
  ParamStore& store() { return store_; }
  const BatchNormOptions& bn_options() const { return bn_; }

  Var param(const std::string& name);
  void bind(const std::string& name, Var v);
  Var batch_norm(Var x, const std::string& name);

  /// Leaves created or bound so far, by parameter name.
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape& tape_;
  ParamStore& store_;
  BatchNormOptions bn_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

using Rng = std::mt19937_64;

/// He (fan-in) normal initialisation of a [C_out, C_in, L, L] kernel.
Tensor he_kernel(std::size_t c_out, std::size_t c_in, std::size_t l, Rng& rng);

/// 1x1 convolution with bias: "<name>.weight", "<name>.bias".
void init_conv1x1(ParamStore& store, const std::string& name, std::size_t c_in, std::size_t c_out, Rng& rng);
Var conv1x1(Forward& f, Var x, const std::string& name);

/// [conv(LxL, no bias) -> BN -> ReLU] x 2, both stages to c_out channels.
void init_conv_block(ParamStore& store, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t l,
                     Rng& rng);
Var conv_block(Forward& f, Var x, const std::string& name);

/// Gradient-check inputs holding every trainable tensor of `store` whose
/// name starts with `prefix`, in store order.
std::vector<GradCheckInput> param_inputs(const ParamStore& store, const std::string& prefix = "");

/// Binds leaves created by grad_check back to the parameter names produced
/// by param_inputs. `vars` may carry extra leading inputs; pass `skip`.
void bind_params(Forward& f, const std::vector<GradCheckInput>& inputs, std::span<const Var> vars,
                 std::size_t skip = 0);

}  // namespace tzlab
