#pragma once

#include <string>

#include "tzlab/tensor.hpp"

namespace tzlab {

/// PSNR in dB with peak 1. Identical inputs give +infinity.
double psnr(const Tensor& x, const Tensor& y);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, averaged over valid window positions. Accepts [H,W],
/// [C,H,W] or [B,C,H,W]; planes are scored separately and averaged.
double ssim(const Tensor& x, const Tensor& y);

/// Copy of x clamped to [0,1].
Tensor clamp01(const Tensor& x);

/// JSON-friendly number: "inf" for +infinity, otherwise the shortest
/// round-trip decimal.
std::string format_metric(double v);

}  // namespace tzlab
