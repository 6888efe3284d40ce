#pragma once

// Multi-scale restoration networks.
//
// Scale 1 is the full-resolution time-max branch; scale s > 1 runs at
// 1/2^(s-1) resolution. Channel width at scale s is base * 2^(s-1), capped
// at 8 * base.
//
//   SARNet     encoder: e1 = block(time_max); e_s = block(SAFM(bands_s, pool(e_{s-1})))
//              decoder: d_s = block(CAM(reduce(up(d_{s+1})), e_s)); head = sigmoid(1x1)
//   UNetBase   no spectral input; decoder merges by concatenation
//   UNetMS     UNetBase fed time_max plus every amplitude band at scale 1

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tzlab/layers.hpp"
#include "tzlab/sim.hpp"

namespace tzlab {

enum class Arch { SARNet, UNetBase, UNetMS };

std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::SARNet;
  std::size_t scales = 5;
  std::size_t base_channels = 32;
  std::size_t k = 16;   // subspace rank
  std::size_t c1 = 16;  // SAFM encoder width
  std::size_t cam_ratio = 4;
  std::size_t bands_per_scale = 3;
  std::size_t band_count = 12;
  std::size_t trunk_kernel = 3;
  std::size_t spectral_kernel = 1;
  double eps_reg = 1e-6;

  std::size_t channels(std::size_t scale) const;
  /// Band indices feeding scale s (2..scales). Groups of bands_per_scale
  /// are spread evenly over the table, lowest frequencies at scale 2.
  std::vector<std::size_t> band_group(std::size_t scale) const;
  /// Input extent must be a multiple of this.
  std::size_t size_multiple() const { return std::size_t{1} << (scales - 1); }
  void validate() const;

  /// scales 3, base 8, two bands per scale.
  static ModelConfig toy(Arch arch = Arch::SARNet);
};

/// A batch of views, [B,1,H,W] / [B,bands,H,W].
struct NetInput {
  Tensor time_max;
  Tensor amplitude;
  Tensor phase;

  std::size_t batch() const { return time_max.dim(0); }
};

NetInput make_input(std::span<const sim::SpectralProjection> views);
NetInput make_input(std::span<const sim::SpectralProjection* const> views);
Tensor make_target(std::span<const sim::SpectralProjection* const> views);

struct BandLevel {
  Tensor amplitude;  // [B,bands_per_scale,h,w]
  Tensor phase;
};

/// Area-downsampled band groups for scales 2..S (element 0 is scale 2).
std::vector<BandLevel> band_pyramid(const NetInput& in, const ModelConfig& cfg);

/// 2x2 mean pooling of a [B,C,H,W] or [C,H,W] tensor.
Tensor area_downsample(const Tensor& x);

/// He-initialised parameters for cfg.arch.
ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

Var sarnet_forward(Forward& f, const ModelConfig& cfg, const NetInput& in);
Var unet_baseline_forward(Forward& f, const ModelConfig& cfg, const NetInput& in);
Var unet_ms_forward(Forward& f, const ModelConfig& cfg, const NetInput& in);
/// Dispatches on cfg.arch. Output [B,1,H,W] in [0,1].
Var model_forward(Forward& f, const ModelConfig& cfg, const NetInput& in);

/// Eval-mode forward without gradients.
Tensor predict(ParamStore& params, const ModelConfig& cfg, const NetInput& in);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t step = 0;
};

/// Bias-corrected Adam. Parameters without a gradient entry see a zero
/// gradient. Throws NumericError on a non-finite gradient.
void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, OptimState& state, double lr,
               const AdamOptions& opts = {});

/// Staircase decay: initial * decay^floor(epoch / every).
double lr_schedule(std::size_t epoch, double initial = 1e-4, double decay = 0.1, std::size_t every = 300);

}  // namespace tzlab
