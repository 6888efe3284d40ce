#pragma once

// Spectral fusion (SAFM) and channel attention (CAM) blocks.
//
// Spatial maps are flattened row-major, N = H*W. A basis V is [N,K] (or
// [B,N,K]); its rows are per-location codes, so attention logits are
// V V^T, an N x N matrix.

#include <string>

#include "tzlab/layers.hpp"

namespace tzlab {

struct SafmShape {
  std::size_t bands = 3;     // amplitude (and phase) maps entering the block
  std::size_t c1 = 16;       // width of the per-input encoders
  std::size_t k = 16;        // subspace rank
  std::size_t channels = 0;  // channels of the residual feature x_f
  std::size_t kernel = 1;    // L of the fc_a / fc_p / ff blocks
};

/// "<name>.fc_a", "<name>.fc_p": L=1 conv blocks bands -> c1;
/// "<name>.ff": L=1 conv block 2*c1 -> k; "<name>.fs": 1x1 conv 2*bands -> channels.
void init_safm(ParamStore& store, const std::string& name, const SafmShape& shape, Rng& rng);

/// V = reshape(ff(concat(fc_a(xa), fc_p(xp)))), one column per output channel.
/// xa and xp are [bands,H,W] or [B,bands,H,W]; V is [N,K] or [B,N,K].
Var build_basis(Forward& f, Var xa, Var xp, const std::string& name);

/// P = V (V^T V + eps I)^{-1} V^T with eps = eps_reg * trace(V^T V) / K.
Var orth_project(Var v, double eps_reg = 1e-6);

/// beta = softmax over each row of V V^T.
Var attention_weights(Var v);

/// Explicit form: S = [P Xa | P Xp], O = beta S, out = fs(O as [2*bands,H,W]) + x_f.
Var safm_apply(Var xa, Var xp, Var beta, Var p, Var x_f, Var fs_weight, Var fs_bias);

/// Full block as used inside the network. P X is evaluated as V (Y X) with
/// Y = (V^T V + eps I)^{-1} V^T, which never forms the N x N projector.
Var safm_forward(Forward& f, Var xa, Var xp, Var x_f, const std::string& name, double eps_reg = 1e-6);

/// Channel means: [C,H,W] -> [C,1,1], [B,C,H,W] -> [B,C,1,1].
Var cam_pool(Var x);

/// Bottleneck on 2*channels pooled values: "<name>.squeeze" 1x1 conv to
/// 2*channels/ratio, "<name>.excite" 1x1 conv back to 2*channels.
void init_cam(ParamStore& store, const std::string& name, std::size_t channels, std::size_t ratio, Rng& rng);

/// w = sigmoid(excite(relu(squeeze(cam_pool(concat(x_c, x_s)))))), shape [B,2C,1,1].
Var cam_weights(Forward& f, Var x_c, Var x_s, const std::string& name);

/// w1 * x_c + w2 * x_s with w = [w1 | w2] from cam_weights.
Var cam_apply(Forward& f, Var x_c, Var x_s, const std::string& name);

}  // namespace tzlab
