#include "tzlab/fusion.hpp"

#include "tzlab/error.hpp"

namespace tzlab {

namespace {

// Promotes [C,H,W] to [1,C,H,W]; `was_batched` reports the original rank.
Var as_batched(Var x, bool& was_batched, const char* op) {
  const ImageDims d = image_dims(x.value().shape(), op);
  was_batched = x.value().rank() == 4;
  return was_batched ? x : reshape(x, {1, d.channels, d.height, d.width});
}

// [B,C,H,W] -> [B,N,C]
Var to_rows(Var x) {
  const Shape& s = x.shape();
  return transpose(reshape(x, {s[0], s[1], s[2] * s[3]}));
}

// [B,N,C] -> [B,C,H,W]
Var from_rows(Var rows, std::size_t h, std::size_t w) {
  const Shape& s = rows.shape();
  return reshape(transpose(rows), {s[0], s[2], h, w});
}

Var unbatch_matrix(Var m, bool was_batched) {
  if (was_batched) return m;
  return reshape(m, {m.shape()[1], m.shape()[2]});
}

Var to_batched_matrix(Var m) {
  if (m.value().rank() == 3) return m;
  if (m.value().rank() != 2) throw ShapeError("expected a matrix, got " + shape_to_string(m.shape()));
  return reshape(m, {1, m.shape()[0], m.shape()[1]});
}

void require_same_spatial(const Shape& a, const Shape& b, const char* op) {
  const bool ok = a.size() == b.size() && a.size() >= 3 && a[a.size() - 1] == b[b.size() - 1] &&
                  a[a.size() - 2] == b[b.size() - 2] && (a.size() == 3 || a[0] == b[0]);
  if (!ok) {
    throw ShapeError(std::string(op) + ": spatial mismatch " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

}  // namespace

void init_safm(ParamStore& store, const std::string& name, const SafmShape& s, Rng& rng) {
  if (s.bands == 0 || s.c1 == 0 || s.k == 0 || s.channels == 0) throw ConfigError("SAFM '" + name + "': zero width");
  init_conv_block(store, name + ".fc_a", s.bands, s.c1, s.kernel, rng);
  init_conv_block(store, name + ".fc_p", s.bands, s.c1, s.kernel, rng);
  init_conv_block(store, name + ".ff", 2 * s.c1, s.k, s.kernel, rng);
  init_conv1x1(store, name + ".fs", 2 * s.bands, s.channels, rng);
}

Var build_basis(Forward& f, Var xa, Var xp, const std::string& name) {
  require_same_spatial(xa.shape(), xp.shape(), "build_basis");
  bool batched = false, batched_p = false;
  xa = as_batched(xa, batched, "build_basis");
  xp = as_batched(xp, batched_p, "build_basis");
  Var ha = conv_block(f, xa, name + ".fc_a");
  Var hp = conv_block(f, xp, name + ".fc_p");
  Var v = conv_block(f, concat_channels(ha, hp), name + ".ff");
  const std::size_t k = v.shape()[1];
  if (k > v.shape()[2] * v.shape()[3]) {
    throw ShapeError("build_basis: rank K=" + std::to_string(k) + " exceeds N=" +
                     std::to_string(v.shape()[2] * v.shape()[3]));
  }
  return unbatch_matrix(to_rows(v), batched);
}

Var orth_project(Var v, double eps_reg) {
  const bool batched = v.value().rank() == 3;
  Var vb = to_batched_matrix(v);
  Var vt = transpose(vb);
  Var y = spd_solve(add_trace_ridge(matmul(vt, vb), eps_reg), vt);
  return unbatch_matrix(matmul(vb, y), batched);
}

Var attention_weights(Var v) { return softmax_rows(matmul(v, transpose(v))); }

namespace {

Var fuse_output(Var o, Var x_f, Var fs_weight, Var fs_bias, std::size_t h, std::size_t w, bool batched) {
  Var fused = conv2d(from_rows(o, h, w), fs_weight, fs_bias);
  if (fused.shape()[1] != x_f.shape()[1]) {
    throw ShapeError("safm: f_s yields " + std::to_string(fused.shape()[1]) + " channels but x_f has " +
                     std::to_string(x_f.shape()[1]));
  }
  Var out = add(fused, x_f);
  if (batched) return out;
  const Shape& s = out.shape();
  return reshape(out, {s[1], s[2], s[3]});
}

}  // namespace

Var safm_apply(Var xa, Var xp, Var beta, Var p, Var x_f, Var fs_weight, Var fs_bias) {
  require_same_spatial(xa.shape(), xp.shape(), "safm_apply");
  require_same_spatial(xa.shape(), x_f.shape(), "safm_apply");
  bool batched = false, tmp = false;
  xa = as_batched(xa, batched, "safm_apply");
  xp = as_batched(xp, tmp, "safm_apply");
  x_f = as_batched(x_f, tmp, "safm_apply");
  const std::size_t h = xa.shape()[2], w = xa.shape()[3];
  Var x = to_rows(concat_channels(xa, xp));
  Var o = matmul(to_batched_matrix(beta), matmul(to_batched_matrix(p), x));
  return fuse_output(o, x_f, fs_weight, fs_bias, h, w, batched);
}

Var safm_forward(Forward& f, Var xa, Var xp, Var x_f, const std::string& name, double eps_reg) {
  require_same_spatial(xa.shape(), x_f.shape(), "safm");
  bool batched = false, tmp = false;
  Var xab = as_batched(xa, batched, "safm");
  Var xpb = as_batched(xp, tmp, "safm");
  Var xfb = as_batched(x_f, tmp, "safm");
  const std::size_t h = xab.shape()[2], w = xab.shape()[3];
  Var v = build_basis(f, xab, xpb, name);
  Var vt = transpose(v);
  Var y = spd_solve(add_trace_ridge(matmul(vt, v), eps_reg), vt);
  Var x = to_rows(concat_channels(xab, xpb));
  Var px = matmul(v, matmul(y, x));
  Var o = matmul(attention_weights(v), px);
  return fuse_output(o, xfb, f.param(name + ".fs.weight"), f.param(name + ".fs.bias"), h, w, batched);
}

Var cam_pool(Var x) { return global_avg_pool(x); }

void init_cam(ParamStore& store, const std::string& name, std::size_t channels, std::size_t ratio, Rng& rng) {
  const std::size_t c = 2 * channels;
  if (ratio == 0 || c % ratio != 0) {
    throw ConfigError("CAM '" + name + "': " + std::to_string(c) + " pooled channels not divisible by ratio " +
                      std::to_string(ratio));
  }
  init_conv1x1(store, name + ".squeeze", c, c / ratio, rng);
  init_conv1x1(store, name + ".excite", c / ratio, c, rng);
}

Var cam_weights(Forward& f, Var x_c, Var x_s, const std::string& name) {
  if (x_c.shape() != x_s.shape()) {
    throw ShapeError("cam: x_c " + shape_to_string(x_c.shape()) + " and x_s " + shape_to_string(x_s.shape()) +
                     " must match");
  }
  bool batched = false;
  Var g = cam_pool(as_batched(concat_channels(x_c, x_s), batched, "cam"));
  return sigmoid(conv1x1(f, relu(conv1x1(f, g, name + ".squeeze")), name + ".excite"));
}

Var cam_apply(Forward& f, Var x_c, Var x_s, const std::string& name) {
  Var w = cam_weights(f, x_c, x_s, name);
  const std::size_t c = w.shape()[1] / 2;
  bool batched = false, tmp = false;
  Var xc = as_batched(x_c, batched, "cam");
  Var xs = as_batched(x_s, tmp, "cam");
  Var out = add(channel_scale(xc, slice_channels(w, 0, c)), channel_scale(xs, slice_channels(w, c, c)));
  if (batched) return out;
  const Shape& s = out.shape();
  return reshape(out, {s[1], s[2], s[3]});
}

}  // namespace tzlab
