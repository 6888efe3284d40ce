#include "tzlab/layers.hpp"

#include <cmath>

#include "tzlab/error.hpp"

namespace tzlab {

void ParamStore::add(const std::string& name, Tensor value) {
  if (tensors_.count(name) || bn_.count(name)) throw ConfigError("parameter '" + name + "' defined twice");
  order_.push_back(name);
  tensors_.emplace(name, std::move(value));
}

void ParamStore::add_batch_norm(const std::string& name, std::size_t channels) {
  add(name + ".gamma", Tensor({channels}, 1.0));
  add(name + ".beta", Tensor({channels}, 0.0));
  if (bn_.count(name)) throw ConfigError("batch norm '" + name + "' defined twice");
  bn_order_.push_back(name);
  bn_.emplace(name, BatchNormState::identity(channels));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).at(name));
}

const BatchNormState& ParamStore::bn_state(const std::string& name) const {
  auto it = bn_.find(name);
  if (it == bn_.end()) throw ConfigError("unknown batch norm '" + name + "'");
  return it->second;
}

BatchNormState& ParamStore::bn_state(const std::string& name) {
  return const_cast<BatchNormState&>(static_cast<const ParamStore&>(*this).bn_state(name));
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& [name, t] : tensors_)
    if (!t.all_finite()) return false;
  for (const auto& [name, s] : bn_)
    if (!s.running_mean.all_finite() || !s.running_var.all_finite()) return false;
  return true;
}

Var Forward::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(store_.at(name), trainable_);
  bound_.emplace(name, v);
  return v;
}

void Forward::bind(const std::string& name, Var v) {
  if (v.value().shape() != store_.at(name).shape()) {
    throw ShapeError("bind: '" + name + "' expects " + shape_to_string(store_.at(name).shape()) + ", got " +
                     shape_to_string(v.value().shape()));
  }
  bound_[name] = v;
}

Var Forward::batch_norm(Var x, const std::string& name) {
  return tzlab::batch_norm(x, param(name + ".gamma"), param(name + ".beta"), store_.bn_state(name), bn_);
}

Tensor he_kernel(std::size_t c_out, std::size_t c_in, std::size_t l, Rng& rng) {
  Tensor k({c_out, c_in, l, l});
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(c_in * l * l)));
  for (double& v : k.values()) v = dist(rng);
  return k;
}

void init_conv1x1(ParamStore& store, const std::string& name, std::size_t c_in, std::size_t c_out, Rng& rng) {
  store.add(name + ".weight", he_kernel(c_out, c_in, 1, rng));
  store.add(name + ".bias", Tensor({c_out}, 0.0));
}

Var conv1x1(Forward& f, Var x, const std::string& name) {
  return conv2d(x, f.param(name + ".weight"), f.param(name + ".bias"));
}

void init_conv_block(ParamStore& store, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t l,
                     Rng& rng) {
  if (l != 1 && l != 3) throw ConfigError("conv block '" + name + "': L must be 1 or 3, got " + std::to_string(l));
  store.add(name + ".conv1", he_kernel(c_out, c_in, l, rng));
  store.add_batch_norm(name + ".bn1", c_out);
  store.add(name + ".conv2", he_kernel(c_out, c_out, l, rng));
  store.add_batch_norm(name + ".bn2", c_out);
}

Var conv_block(Forward& f, Var x, const std::string& name) {
  Var h = relu(f.batch_norm(conv2d(x, f.param(name + ".conv1")), name + ".bn1"));
  return relu(f.batch_norm(conv2d(h, f.param(name + ".conv2")), name + ".bn2"));
}

std::vector<GradCheckInput> param_inputs(const ParamStore& store, const std::string& prefix) {
  std::vector<GradCheckInput> out;
  for (const std::string& n : store.names())
    if (n.compare(0, prefix.size(), prefix) == 0) out.push_back({n, store.at(n), true});
  return out;
}

void bind_params(Forward& f, const std::vector<GradCheckInput>& inputs, std::span<const Var> vars, std::size_t skip) {
  if (vars.size() < skip + inputs.size()) throw ShapeError("bind_params: too few leaves");
  for (std::size_t i = 0; i < inputs.size(); ++i) f.bind(inputs[i].name, vars[skip + i]);
}

}  // namespace tzlab
