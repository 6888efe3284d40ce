#include "tzlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tzlab/ops.hpp"

namespace tzlab {

namespace {

struct Evaluation {
  double loss;
  std::uint64_t signature;
};

Evaluation evaluate(const GradCheckFn& fn, const std::vector<GradCheckInput>& inputs, const Tensor& weights) {
  Tape tape;
  tape.set_branch_tracking(true);
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.value, false));
  Var out = fn(tape, leaves);
  Var loss = weighted_sum(out, weights);
  return {loss.value()[0], tape.branch_signature()};
}

}  // namespace

GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<GradCheckInput>& inputs,
                           const GradCheckOptions& opts) {
  GradCheckReport report;
  report.rel_tol = opts.rel_tol;
  std::mt19937_64 rng(opts.seed);

  // Analytic pass.
  Tape tape;
  tape.set_branch_tracking(true);
  std::vector<Var> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in.value, in.trainable));
  Var out = fn(tape, leaves);
  Tensor weights(out.value().shape());
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (double& w : weights.values()) w = unit(rng);
  Var loss = weighted_sum(out, weights);
  const std::uint64_t base_signature = tape.branch_signature();
  tape.backward(loss);

  std::vector<GradCheckInput> probe_inputs = inputs;
  bool all_ok = true;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    GradCheckInputReport ir;
    ir.name = inputs[k].name;
    ir.trainable = inputs[k].trainable;
    const auto analytic = tape.grad(leaves[k]);
    if (!inputs[k].trainable) {
      ir.gradient_presence_ok = !analytic.has_value();
      all_ok = all_ok && ir.gradient_presence_ok;
      report.inputs.push_back(ir);
      continue;
    }
    const Tensor grad = analytic ? *analytic : Tensor(inputs[k].value.shape(), 0.0);

    std::vector<std::size_t> coords(inputs[k].value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_probes_per_input > 0 && coords.size() > opts.max_probes_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_probes_per_input);
      std::sort(coords.begin(), coords.end());
    }

    std::vector<std::pair<double, double>> pairs;  // (analytic, numeric)
    for (std::size_t c : coords) {
      double& x = probe_inputs[k].value[c];
      const double x0 = x;
      const double h = opts.step_scale * (1.0 + std::abs(x0));
      x = x0 + h;
      const Evaluation plus = evaluate(fn, probe_inputs, weights);
      x = x0 - h;
      const Evaluation minus = evaluate(fn, probe_inputs, weights);
      x = x0;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++ir.skipped_nonsmooth;
        continue;
      }
      pairs.emplace_back(grad[c], (plus.loss - minus.loss) / (2.0 * h));
    }

    double scale = 0.0;
    for (const auto& [a, n] : pairs) scale = std::max(scale, std::abs(n));
    const double floor = std::max(opts.floor_fraction * scale, 1e-12);
    for (const auto& [a, n] : pairs) {
      const double denom = std::max({std::abs(a), std::abs(n), floor});
      ir.max_rel_error = std::max(ir.max_rel_error, std::abs(a - n) / denom);
    }
    ir.probes = pairs.size();
    report.probes += ir.probes;
    report.skipped_nonsmooth += ir.skipped_nonsmooth;
    report.max_rel_error = std::max(report.max_rel_error, ir.max_rel_error);
    report.inputs.push_back(ir);
  }
  report.passed = all_ok && report.probes > 0 && report.max_rel_error <= opts.rel_tol;
  return report;
}

}  // namespace tzlab
