#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tzlab/tape.hpp"

namespace tzlab {

struct GradCheckInput {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct GradCheckOptions {
  double rel_tol = 1e-5;
  /// Coordinates probed per trainable input; 0 probes every coordinate.
  std::size_t max_probes_per_input = 0;
  std::uint64_t seed = 0x5eed;
  /// Central-difference step is step_scale * (1 + |x|).
  double step_scale = 1e-6;
  /// Per-input error floor as a fraction of that input's largest numeric
  /// gradient, so near-zero entries are judged on the input's own scale.
  double floor_fraction = 1e-3;
};

struct GradCheckInputReport {
  std::string name;
  bool trainable = true;
  /// False for a frozen input that nevertheless received a gradient.
  bool gradient_presence_ok = true;
  std::size_t probes = 0;
  std::size_t skipped_nonsmooth = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  double rel_tol = 0.0;
  std::size_t probes = 0;
  std::size_t skipped_nonsmooth = 0;
  std::vector<GradCheckInputReport> inputs;
};

/// Builds the function under test on the given tape from leaves holding the
/// inputs, in order.
using GradCheckFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape adjoints of <fn(inputs), r> (r a fixed random weighting)
/// against central finite differences. Probes whose +h or -h evaluation
/// switches a relu/max-pool branch are skipped as non-smooth points. Never
/// throws for a mismatch; the report carries pass/fail.
GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<GradCheckInput>& inputs,
                           const GradCheckOptions& opts = {});

}  // namespace tzlab
