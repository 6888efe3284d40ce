#pragma once

// Differentiable operations on Tape values.
//
// Image operations take [C,H,W] or batched [B,C,H,W] tensors and return the
// same rank they were given. Matrix operations take [M,N] or batched [B,M,N].

#include "tzlab/tape.hpp"

namespace tzlab {

enum class Padding { Same, Valid };

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding pad = Padding::Same;
};

/// Cross-correlation (no kernel flip) with zero padding. Kernel is
/// [C_out, C_in, L, L] with odd L; bias, when given, is [C_out].
Var conv2d(Var input, Var kernel, const Conv2dOptions& opts = {});
Var conv2d(Var input, Var kernel, Var bias, const Conv2dOptions& opts = {});

enum class BnMode { Train, Eval };

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]

  static BatchNormState identity(std::size_t channels);
};

struct BatchNormOptions {
  BnMode mode = BnMode::Train;
  double momentum = 0.1;
  double eps = 1e-5;
  /// Train mode only: fold batch statistics into the running estimates.
  bool update_running = true;
};

/// Per-channel normalisation over the batch and spatial axes. gamma and beta
/// are [C]. Train mode uses batch statistics (biased variance) and updates
/// the running estimates (unbiased variance); eval mode uses the running
/// estimates.
Var batch_norm(Var input, Var gamma, Var beta, BatchNormState& state, const BatchNormOptions& opts);

Var relu(Var x);
Var sigmoid(Var x);

/// Numerically stable logistic function.
double sigmoid(double x) noexcept;

enum class PoolKind { Max, Area };

/// 2x2 stride-2 pooling. Max takes the window maximum (first in row-major
/// order on ties); Area takes the window mean. H and W must be even.
Var downsample2(Var x, PoolKind kind);

/// 2x bilinear upsampling, corner-aligned: output pixel o along an axis of
/// input extent n samples the input at o * (n - 1) / (2n - 1), so the first
/// and last output samples coincide with the first and last input samples.
Var upsample2(Var x);

Var concat_channels(Var a, Var b);
Var slice_channels(Var x, std::size_t start, std::size_t count);

/// Mean over H and W: [B,C,H,W] -> [B,C,1,1].
Var global_avg_pool(Var x);

/// Multiplies every channel plane of x [B,C,H,W] by w [B,C,1,1].
Var channel_scale(Var x, Var w);

Var add(Var a, Var b);
Var reshape(Var x, Shape shape);

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(Var x);

/// [M,K]x[K,N] or batched [B,M,K]x[B,K,N].
Var matmul(Var a, Var b);

/// Y = sym(A)^{-1} R by Cholesky factorisation, sym(A) = (A + A^T)/2.
/// A is [K,K] or [B,K,K]; R is [K,M] or [B,K,M]. Throws NumericError with a
/// condition estimate when sym(A) is not numerically positive definite.
Var spd_solve(Var a, Var r);

/// A + (eps_reg * trace(A) / K) I for square A [K,K] or [B,K,K].
Var add_trace_ridge(Var a, double eps_reg);

/// Softmax over the last axis with max subtraction.
Var softmax_rows(Var x);

/// (1/n) sum (a - b)^2 over all n elements; returns shape [1].
Var mse_loss(Var a, Var b);

/// sum x * weights over all elements; returns shape [1].
Var weighted_sum(Var x, const Tensor& weights);

}  // namespace tzlab
