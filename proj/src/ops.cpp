#include "tzlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tzlab/error.hpp"
#include "tzlab/kernels.hpp"

namespace tzlab {

namespace {

std::uint64_t mix_bits(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_to_string(a.shape()) + " does not match " +
                     shape_to_string(b.shape()));
  }
}

struct MatDims {
  std::size_t batch;
  std::size_t rows;
  std::size_t cols;
};

MatDims mat_dims(const Tensor& t, const char* op) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1)};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw ShapeError(std::string(op) + ": expected [M,N] or [B,M,N], got " + shape_to_string(t.shape()));
}

Shape mat_shape(std::size_t batch, std::size_t rows, std::size_t cols, bool batched) {
  if (batched) return {batch, rows, cols};
  return {rows, cols};
}

void transpose_into(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

// ---------------------------------------------------------------------------
// conv2d

struct ConvGeometry {
  ImageDims in;
  std::size_t c_out;
  std::size_t k;
  std::size_t pad;
  std::size_t stride;
  std::size_t out_h;
  std::size_t out_w;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, const Conv2dOptions& opts) {
  ConvGeometry g{};
  g.in = image_dims(input.shape(), "conv2d");
  if (kernel.rank() != 4) {
    throw ShapeError("conv2d: kernel must be [C_out,C_in,L,L], got " + shape_to_string(kernel.shape()));
  }
  if (kernel.dim(1) != g.in.channels) {
    throw ShapeError("conv2d: kernel axis 1 (C_in) is " + std::to_string(kernel.dim(1)) + " but input has " +
                     std::to_string(g.in.channels) + " channels");
  }
  if (kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d: kernel axes 2 and 3 differ (" + std::to_string(kernel.dim(2)) + " vs " +
                     std::to_string(kernel.dim(3)) + ")");
  }
  g.k = kernel.dim(2);
  if (g.k % 2 == 0) throw ShapeError("conv2d: kernel size L=" + std::to_string(g.k) + " must be odd");
  if (opts.stride == 0) throw ShapeError("conv2d: stride must be positive");
  g.c_out = kernel.dim(0);
  g.stride = opts.stride;
  g.pad = opts.pad == Padding::Same ? (g.k - 1) / 2 : 0;
  const std::size_t eff_h = g.in.height + 2 * g.pad;
  const std::size_t eff_w = g.in.width + 2 * g.pad;
  if (eff_h < g.k || eff_w < g.k) {
    throw ShapeError("conv2d: input " + shape_to_string(input.shape()) + " smaller than kernel L=" +
                     std::to_string(g.k));
  }
  g.out_h = (eff_h - g.k) / g.stride + 1;
  g.out_w = (eff_w - g.k) / g.stride + 1;
  return g;
}

// Unfolds one [C,H,W] plane stack into col [C*L*L, out_h*out_w]; taps that
// fall into the zero padding stay zero.
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t p = g.out_h * g.out_w;
  for (std::size_t ci = 0; ci < g.in.channels; ++ci) {
    const double* xp = x + ci * g.in.plane();
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((ci * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = xp + iy * g.in.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = ix < 0 || ix >= static_cast<long>(g.in.width) ? 0.0 : src[ix];
          }
        }
      }
  }
}

// Adjoint of im2col: scatters col back onto x (accumulating).
void col2im(const double* col, const ConvGeometry& g, double* x) {
  const std::size_t p = g.out_h * g.out_w;
  for (std::size_t ci = 0; ci < g.in.channels; ++ci) {
    double* xp = x + ci * g.in.plane();
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((ci * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in.height)) continue;
          const double* src = row + oy * g.out_w;
          double* dst = xp + iy * g.in.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.in.width)) dst[ix] += src[ox];
          }
        }
      }
  }
}

// A 1x1 stride-1 kernel reads the input planes as they are.
bool trivial_unfold(const ConvGeometry& g) { return g.k == 1 && g.stride == 1; }

Tensor conv_forward(const Tensor& input, const Tensor& kernel, const Tensor* bias, const ConvGeometry& g) {
  const bool batched = input.rank() == 4;
  Tensor out(batched ? Shape{g.in.batch, g.c_out, g.out_h, g.out_w} : Shape{g.c_out, g.out_h, g.out_w});
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t ckk = g.in.channels * g.k * g.k;
  std::vector<double> col(trivial_unfold(g) ? 0 : ckk * out_plane);
  for (std::size_t b = 0; b < g.in.batch; ++b) {
    double* op = out.data() + b * g.c_out * out_plane;
    if (bias)
      for (std::size_t co = 0; co < g.c_out; ++co) std::fill_n(op + co * out_plane, out_plane, (*bias)[co]);
    const double* xb = input.data() + b * g.in.channels * g.in.plane();
    const double* cp = xb;
    if (!trivial_unfold(g)) {
      im2col(xb, g, col.data());
      cp = col.data();
    }
    kernels::gemm_acc(g.c_out, out_plane, ckk, kernel.data(), cp, op);
  }
  return out;
}

void conv_backward(Tape& tape, Var input, Var kernel, const Var* bias, const ConvGeometry& g, const Tensor& gout) {
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  const bool need_x = tape.requires_grad(input);
  const bool need_w = tape.requires_grad(kernel);
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t ckk = g.in.channels * g.k * g.k;

  if (bias && tape.requires_grad(*bias)) {
    Tensor gb(Shape{g.c_out}, 0.0);
    for (std::size_t b = 0; b < g.in.batch; ++b)
      for (std::size_t co = 0; co < g.c_out; ++co) {
        const double* gp = gout.data() + (b * g.c_out + co) * out_plane;
        double s = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) s += gp[i];
        gb[co] += s;
      }
    tape.accumulate(*bias, gb);
  }
  if (!need_x && !need_w) return;

  Tensor gx = need_x ? Tensor(x.shape(), 0.0) : Tensor();
  Tensor gw = need_w ? Tensor(w.shape(), 0.0) : Tensor();
  std::vector<double> col(ckk * out_plane), col_t(need_w ? ckk * out_plane : 0), w_t(need_x ? ckk * g.c_out : 0);
  if (need_x) transpose_into(w.data(), w_t.data(), g.c_out, ckk);
  for (std::size_t b = 0; b < g.in.batch; ++b) {
    const double* gp = gout.data() + b * g.c_out * out_plane;
    const double* xb = x.data() + b * g.in.channels * g.in.plane();
    if (need_w) {
      const double* cp = xb;
      if (!trivial_unfold(g)) {
        im2col(xb, g, col.data());
        cp = col.data();
      }
      transpose_into(cp, col_t.data(), ckk, out_plane);
      kernels::gemm_acc(g.c_out, ckk, out_plane, gp, col_t.data(), gw.data());
    }
    if (need_x) {
      double* gxb = gx.data() + b * g.in.channels * g.in.plane();
      if (trivial_unfold(g)) {
        kernels::gemm_acc(ckk, out_plane, g.c_out, w_t.data(), gp, gxb);
      } else {
        std::fill(col.begin(), col.end(), 0.0);
        kernels::gemm_acc(ckk, out_plane, g.c_out, w_t.data(), gp, col.data());
        col2im(col.data(), g, gxb);
      }
    }
  }
  if (need_x) tape.accumulate(input, gx);
  if (need_w) tape.accumulate(kernel, gw);
}

// ---------------------------------------------------------------------------
// Cholesky helpers for spd_solve

// In-place lower Cholesky of a k x k symmetric matrix. Returns false on a
// non-positive pivot.
bool cholesky(double* a, std::size_t k) {
  for (std::size_t j = 0; j < k; ++j) {
    double d = a[j * k + j];
    for (std::size_t p = 0; p < j; ++p) d -= a[j * k + p] * a[j * k + p];
    if (!(d > 0.0)) return false;
    const double ljj = std::sqrt(d);
    a[j * k + j] = ljj;
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = a[i * k + j];
      for (std::size_t p = 0; p < j; ++p) s -= a[i * k + p] * a[j * k + p];
      a[i * k + j] = s / ljj;
    }
    for (std::size_t i = 0; i < j; ++i) a[i * k + j] = 0.0;
  }
  return true;
}

// Solves L L^T Y = R in place for R [k, m].
void cholesky_solve(const double* l, std::size_t k, double* r, std::size_t m) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t p = 0; p < i; ++p) {
      const double lip = l[i * k + p];
      if (lip != 0.0) kernels::axpy(-lip, r + p * m, r + i * m, m);
    }
    const double inv = 1.0 / l[i * k + i];
    for (std::size_t c = 0; c < m; ++c) r[i * m + c] *= inv;
  }
  for (std::size_t i = k; i-- > 0;) {
    for (std::size_t p = i + 1; p < k; ++p) {
      const double lpi = l[p * k + i];
      if (lpi != 0.0) kernels::axpy(-lpi, r + p * m, r + i * m, m);
    }
    const double inv = 1.0 / l[i * k + i];
    for (std::size_t c = 0; c < m; ++c) r[i * m + c] *= inv;
  }
}

constexpr double kMaxCondition = 1e14;

}  // namespace

// ---------------------------------------------------------------------------

Var conv2d(Var input, Var kernel, const Conv2dOptions& opts) {
  const ConvGeometry g = conv_geometry(input.value(), kernel.value(), opts);
  Tensor out = conv_forward(input.value(), kernel.value(), nullptr, g);
  return input.tape->record(
      std::move(out), {input, kernel},
      [input, kernel, g](Tape& tape, const Tensor& gout, const Tensor&) {
        conv_backward(tape, input, kernel, nullptr, g, gout);
      },
      "conv2d");
}

Var conv2d(Var input, Var kernel, Var bias, const Conv2dOptions& opts) {
  const ConvGeometry g = conv_geometry(input.value(), kernel.value(), opts);
  if (bias.value().shape() != Shape{g.c_out}) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.c_out) + "], got " +
                     shape_to_string(bias.value().shape()));
  }
  Tensor out = conv_forward(input.value(), kernel.value(), &bias.value(), g);
  return input.tape->record(
      std::move(out), {input, kernel, bias},
      [input, kernel, bias, g](Tape& tape, const Tensor& gout, const Tensor&) {
        conv_backward(tape, input, kernel, &bias, g, gout);
      },
      "conv2d");
}

BatchNormState BatchNormState::identity(std::size_t channels) {
  return BatchNormState{Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0)};
}

Var batch_norm(Var input, Var gamma, Var beta, BatchNormState& state, const BatchNormOptions& opts) {
  const Tensor& x = input.value();
  const ImageDims d = image_dims(x.shape(), "batch_norm");
  if (!(opts.eps > 0.0)) throw ShapeError("batch_norm: eps must be positive");
  const Shape cshape{d.channels};
  if (gamma.value().shape() != cshape || beta.value().shape() != cshape) {
    throw ShapeError("batch_norm: gamma/beta must be [" + std::to_string(d.channels) + "]");
  }
  if (state.running_mean.shape() != cshape || state.running_var.shape() != cshape) {
    throw ShapeError("batch_norm: running statistics must be [" + std::to_string(d.channels) + "]");
  }
  const std::size_t per_channel = d.batch * d.plane();
  if (per_channel == 0) throw ShapeError("batch_norm: channel has zero elements");

  Tensor mean(cshape), inv_std(cshape);
  if (opts.mode == BnMode::Train) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* p = x.data() + (b * d.channels + c) * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(per_channel);
      double v = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* p = x.data() + (b * d.channels + c) * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / static_cast<double>(per_channel);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + opts.eps);
      if (opts.update_running) {
        const double unbiased = per_channel > 1 ? v / static_cast<double>(per_channel - 1) : var;
        state.running_mean[c] = (1.0 - opts.momentum) * state.running_mean[c] + opts.momentum * mu;
        state.running_var[c] = (1.0 - opts.momentum) * state.running_var[c] + opts.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < d.channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + opts.eps);
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.channels; ++c) {
      const std::size_t off = (b * d.channels + c) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) {
        const double h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gm[c] * h + bt[c];
      }
    }

  const bool train = opts.mode == BnMode::Train;
  return input.tape->record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, d, train, inv_std, xhat = std::move(xhat)](Tape& tape, const Tensor& gout,
                                                                      const Tensor&) {
        const Tensor& gm = gamma.value();
        Tensor gg(Shape{d.channels}, 0.0), gb(Shape{d.channels}, 0.0);
        for (std::size_t b = 0; b < d.batch; ++b)
          for (std::size_t c = 0; c < d.channels; ++c) {
            const std::size_t off = (b * d.channels + c) * d.plane();
            for (std::size_t i = 0; i < d.plane(); ++i) {
              gg[c] += gout[off + i] * xhat[off + i];
              gb[c] += gout[off + i];
            }
          }
        if (tape.requires_grad(input)) {
          Tensor gx(gout.shape());
          const double n = static_cast<double>(d.batch * d.plane());
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t c = 0; c < d.channels; ++c) {
              const std::size_t off = (b * d.channels + c) * d.plane();
              for (std::size_t i = 0; i < d.plane(); ++i) {
                const double gh = gout[off + i] * gm[c];
                if (train) {
                  // d/dx of gamma * (x - mean) / std with batch statistics.
                  gx[off + i] =
                      inv_std[c] * (gh - gm[c] * gb[c] / n - gm[c] * xhat[off + i] * gg[c] / n);
                } else {
                  gx[off + i] = gh * inv_std[c];
                }
              }
            }
          tape.accumulate(input, gx);
        }
        tape.accumulate(gamma, gg);
        tape.accumulate(beta, gb);
      },
      "batch_norm");
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var relu(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  std::uint64_t sig = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const bool on = in[i] > 0.0;
    out[i] = on ? in[i] : 0.0;
    if (on) sig = mix_bits(sig, i);
  }
  x.tape->note_branch(sig);
  return x.tape->record(
      std::move(out), {x},
      [x](Tape& tape, const Tensor& gout, const Tensor&) {
        const Tensor& in = x.value();
        Tensor g(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > 0.0 ? gout[i] : 0.0;
        tape.accumulate(x, g);
      },
      "relu");
}

Var sigmoid(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid(in[i]);
  return x.tape->record(
      std::move(out), {x},
      [x](Tape& tape, const Tensor& gout, const Tensor& y) {
        Tensor g(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) g[i] = gout[i] * y[i] * (1.0 - y[i]);
        tape.accumulate(x, g);
      },
      "sigmoid");
}

Var downsample2(Var x, PoolKind kind) {
  const Tensor& in = x.value();
  const ImageDims d = image_dims(in.shape(), "downsample2");
  if (d.height % 2 != 0 || d.width % 2 != 0) {
    throw ShapeError("downsample2: spatial extent " + std::to_string(d.height) + "x" + std::to_string(d.width) +
                     " is odd on axis " + (d.height % 2 != 0 ? "H" : "W"));
  }
  ImageDims od = d;
  od.height /= 2;
  od.width /= 2;
  Tensor out(image_shape(od, in.rank() == 4));
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::Max) argmax.resize(out.size());
  std::uint64_t sig = 0;
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const double* ip = in.data() + bc * d.plane();
    double* op = out.data() + bc * od.plane();
    for (std::size_t oy = 0; oy < od.height; ++oy)
      for (std::size_t ox = 0; ox < od.width; ++ox) {
        const std::size_t i00 = (2 * oy) * d.width + 2 * ox;
        const std::size_t idx[4] = {i00, i00 + 1, i00 + d.width, i00 + d.width + 1};
        const std::size_t o = oy * od.width + ox;
        if (kind == PoolKind::Max) {
          std::size_t best = 0;
          for (std::size_t q = 1; q < 4; ++q)
            if (ip[idx[q]] > ip[idx[best]]) best = q;
          op[o] = ip[idx[best]];
          argmax[bc * od.plane() + o] = bc * d.plane() + idx[best];
          sig = mix_bits(sig, best + 4 * o);
        } else {
          op[o] = 0.25 * (ip[idx[0]] + ip[idx[1]] + ip[idx[2]] + ip[idx[3]]);
        }
      }
  }
  if (kind == PoolKind::Max) x.tape->note_branch(sig);
  return x.tape->record(
      std::move(out), {x},
      [x, d, od, kind, argmax = std::move(argmax)](Tape& tape, const Tensor& gout, const Tensor&) {
        Tensor g(x.value().shape(), 0.0);
        if (kind == PoolKind::Max) {
          for (std::size_t i = 0; i < gout.size(); ++i) g[argmax[i]] += gout[i];
        } else {
          for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc)
            for (std::size_t oy = 0; oy < od.height; ++oy)
              for (std::size_t ox = 0; ox < od.width; ++ox) {
                const double v = 0.25 * gout[bc * od.plane() + oy * od.width + ox];
                const std::size_t i00 = bc * d.plane() + (2 * oy) * d.width + 2 * ox;
                g[i00] += v;
                g[i00 + 1] += v;
                g[i00 + d.width] += v;
                g[i00 + d.width + 1] += v;
              }
        }
        tape.accumulate(x, g);
      },
      "downsample2");
}

namespace {

struct Lerp {
  std::size_t i0;
  std::size_t i1;
  double w1;
};

std::vector<Lerp> corner_aligned_taps(std::size_t n_in) {
  const std::size_t n_out = 2 * n_in;
  std::vector<Lerp> taps(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    if (n_in == 1) {
      taps[o] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(o) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 >= n_in - 1) i0 = n_in - 1;
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps[o] = {i0, i1, pos - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Var upsample2(Var x) {
  const Tensor& in = x.value();
  const ImageDims d = image_dims(in.shape(), "upsample2");
  ImageDims od = d;
  od.height *= 2;
  od.width *= 2;
  const auto ty = corner_aligned_taps(d.height);
  const auto tx = corner_aligned_taps(d.width);
  Tensor out(image_shape(od, in.rank() == 4));
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const double* ip = in.data() + bc * d.plane();
    double* op = out.data() + bc * od.plane();
    for (std::size_t oy = 0; oy < od.height; ++oy) {
      const Lerp& ly = ty[oy];
      for (std::size_t ox = 0; ox < od.width; ++ox) {
        const Lerp& lx = tx[ox];
        const double top = (1.0 - lx.w1) * ip[ly.i0 * d.width + lx.i0] + lx.w1 * ip[ly.i0 * d.width + lx.i1];
        const double bot = (1.0 - lx.w1) * ip[ly.i1 * d.width + lx.i0] + lx.w1 * ip[ly.i1 * d.width + lx.i1];
        op[oy * od.width + ox] = (1.0 - ly.w1) * top + ly.w1 * bot;
      }
    }
  }
  return x.tape->record(
      std::move(out), {x},
      [x, d, od, ty, tx](Tape& tape, const Tensor& gout, const Tensor&) {
        Tensor g(x.value().shape(), 0.0);
        for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
          double* gp = g.data() + bc * d.plane();
          const double* go = gout.data() + bc * od.plane();
          for (std::size_t oy = 0; oy < od.height; ++oy) {
            const Lerp& ly = ty[oy];
            for (std::size_t ox = 0; ox < od.width; ++ox) {
              const Lerp& lx = tx[ox];
              const double v = go[oy * od.width + ox];
              gp[ly.i0 * d.width + lx.i0] += (1.0 - ly.w1) * (1.0 - lx.w1) * v;
              gp[ly.i0 * d.width + lx.i1] += (1.0 - ly.w1) * lx.w1 * v;
              gp[ly.i1 * d.width + lx.i0] += ly.w1 * (1.0 - lx.w1) * v;
              gp[ly.i1 * d.width + lx.i1] += ly.w1 * lx.w1 * v;
            }
          }
        }
        tape.accumulate(x, g);
      },
      "upsample2");
}

Var concat_channels(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != tb.rank()) {
    throw ShapeError("concat_channels: rank " + std::to_string(ta.rank()) + " vs " + std::to_string(tb.rank()));
  }
  const ImageDims da = image_dims(ta.shape(), "concat_channels");
  const ImageDims db = image_dims(tb.shape(), "concat_channels");
  if (da.batch != db.batch) throw ShapeError("concat_channels: batch axis mismatch");
  if (da.height != db.height) throw ShapeError("concat_channels: axis H mismatch");
  if (da.width != db.width) throw ShapeError("concat_channels: axis W mismatch");
  ImageDims od = da;
  od.channels = da.channels + db.channels;
  Tensor out(image_shape(od, ta.rank() == 4));
  const std::size_t na = da.channels * da.plane();
  const std::size_t nb = db.channels * db.plane();
  for (std::size_t n = 0; n < da.batch; ++n) {
    std::copy_n(ta.data() + n * na, na, out.data() + n * (na + nb));
    std::copy_n(tb.data() + n * nb, nb, out.data() + n * (na + nb) + na);
  }
  return a.tape->record(
      std::move(out), {a, b},
      [a, b, da, na, nb](Tape& tape, const Tensor& gout, const Tensor&) {
        if (tape.requires_grad(a)) {
          Tensor ga(a.value().shape());
          for (std::size_t n = 0; n < da.batch; ++n) std::copy_n(gout.data() + n * (na + nb), na, ga.data() + n * na);
          tape.accumulate(a, ga);
        }
        if (tape.requires_grad(b)) {
          Tensor gb(b.value().shape());
          for (std::size_t n = 0; n < da.batch; ++n)
            std::copy_n(gout.data() + n * (na + nb) + na, nb, gb.data() + n * nb);
          tape.accumulate(b, gb);
        }
      },
      "concat_channels");
}

Var slice_channels(Var x, std::size_t start, std::size_t count) {
  const Tensor& in = x.value();
  const ImageDims d = image_dims(in.shape(), "slice_channels");
  if (start + count > d.channels) {
    throw ShapeError("slice_channels: channels [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") exceed axis C of extent " + std::to_string(d.channels));
  }
  ImageDims od = d;
  od.channels = count;
  Tensor out(image_shape(od, in.rank() == 4));
  const std::size_t len = count * d.plane();
  for (std::size_t n = 0; n < d.batch; ++n)
    std::copy_n(in.data() + (n * d.channels + start) * d.plane(), len, out.data() + n * len);
  return x.tape->record(
      std::move(out), {x},
      [x, d, start, len](Tape& tape, const Tensor& gout, const Tensor&) {
        Tensor g(x.value().shape(), 0.0);
        for (std::size_t n = 0; n < d.batch; ++n)
          std::copy_n(gout.data() + n * len, len, g.data() + (n * d.channels + start) * d.plane());
        tape.accumulate(x, g);
      },
      "slice_channels");
}

Var global_avg_pool(Var x) {
  const Tensor& in = x.value();
  const ImageDims d = image_dims(in.shape(), "global_avg_pool");
  if (d.plane() == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  ImageDims od = d;
  od.height = od.width = 1;
  Tensor out(image_shape(od, in.rank() == 4));
  const double inv = 1.0 / static_cast<double>(d.plane());
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const double* p = in.data() + bc * d.plane();
    double s = 0.0;
    for (std::size_t i = 0; i < d.plane(); ++i) s += p[i];
    out[bc] = s * inv;
  }
  return x.tape->record(
      std::move(out), {x},
      [x, d, inv](Tape& tape, const Tensor& gout, const Tensor&) {
        Tensor g(x.value().shape());
        for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc)
          std::fill_n(g.data() + bc * d.plane(), d.plane(), gout[bc] * inv);
        tape.accumulate(x, g);
      },
      "global_avg_pool");
}

Var channel_scale(Var x, Var w) {
  const Tensor& in = x.value();
  const ImageDims d = image_dims(in.shape(), "channel_scale");
  const ImageDims dw = image_dims(w.value().shape(), "channel_scale");
  if (w.value().rank() != in.rank() || dw.batch != d.batch || dw.channels != d.channels || dw.plane() != 1) {
    throw ShapeError("channel_scale: weights " + shape_to_string(w.value().shape()) + " do not match input " +
                     shape_to_string(in.shape()));
  }
  Tensor out(in.shape());
  const Tensor& wv = w.value();
  for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc) {
    const double s = wv[bc];
    for (std::size_t i = 0; i < d.plane(); ++i) out[bc * d.plane() + i] = s * in[bc * d.plane() + i];
  }
  return x.tape->record(
      std::move(out), {x, w},
      [x, w, d](Tape& tape, const Tensor& gout, const Tensor&) {
        const Tensor& in = x.value();
        const Tensor& wv = w.value();
        if (tape.requires_grad(x)) {
          Tensor gx(in.shape());
          for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc)
            for (std::size_t i = 0; i < d.plane(); ++i) gx[bc * d.plane() + i] = wv[bc] * gout[bc * d.plane() + i];
          tape.accumulate(x, gx);
        }
        if (tape.requires_grad(w)) {
          Tensor gw(wv.shape());
          for (std::size_t bc = 0; bc < d.batch * d.channels; ++bc)
            gw[bc] = kernels::dot(gout.data() + bc * d.plane(), in.data() + bc * d.plane(), d.plane());
          tape.accumulate(w, gw);
        }
      },
      "channel_scale");
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape& tape, const Tensor& gout, const Tensor&) {
        tape.accumulate(a, gout);
        tape.accumulate(b, gout);
      },
      "add");
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape->record(
      std::move(out), {x},
      [x](Tape& tape, const Tensor& gout, const Tensor&) { tape.accumulate(x, gout.reshaped(x.value().shape())); },
      "reshape");
}

Var transpose(Var x) {
  const Tensor& in = x.value();
  const MatDims d = mat_dims(in, "transpose");
  Tensor out(mat_shape(d.batch, d.cols, d.rows, in.rank() == 3));
  const std::size_t n = d.rows * d.cols;
  for (std::size_t b = 0; b < d.batch; ++b) transpose_into(in.data() + b * n, out.data() + b * n, d.rows, d.cols);
  return x.tape->record(
      std::move(out), {x},
      [x, d, n](Tape& tape, const Tensor& gout, const Tensor&) {
        Tensor g(x.value().shape());
        for (std::size_t b = 0; b < d.batch; ++b) transpose_into(gout.data() + b * n, g.data() + b * n, d.cols, d.rows);
        tape.accumulate(x, g);
      },
      "transpose");
}

Var matmul(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != tb.rank()) {
    throw ShapeError("matmul: rank " + std::to_string(ta.rank()) + " vs " + std::to_string(tb.rank()));
  }
  const MatDims da = mat_dims(ta, "matmul");
  const MatDims db = mat_dims(tb, "matmul");
  if (da.batch != db.batch) throw ShapeError("matmul: batch axis mismatch");
  if (da.cols != db.rows) {
    throw ShapeError("matmul: inner axis mismatch, " + shape_to_string(ta.shape()) + " x " +
                     shape_to_string(tb.shape()));
  }
  const bool batched = ta.rank() == 3;
  const std::size_t m = da.rows, k = da.cols, n = db.cols;
  Tensor out(mat_shape(da.batch, m, n, batched), 0.0);
  for (std::size_t bi = 0; bi < da.batch; ++bi)
    kernels::gemm_acc(m, n, k, ta.data() + bi * m * k, tb.data() + bi * k * n, out.data() + bi * m * n);
  return a.tape->record(
      std::move(out), {a, b},
      [a, b, batch = da.batch, m, k, n](Tape& tape, const Tensor& gout, const Tensor&) {
        const Tensor& ta = a.value();
        const Tensor& tb = b.value();
        if (tape.requires_grad(a)) {
          // dA = dC B^T
          Tensor ga(ta.shape(), 0.0);
          std::vector<double> bt(k * n);
          for (std::size_t bi = 0; bi < batch; ++bi) {
            transpose_into(tb.data() + bi * k * n, bt.data(), k, n);
            kernels::gemm_acc(m, k, n, gout.data() + bi * m * n, bt.data(), ga.data() + bi * m * k);
          }
          tape.accumulate(a, ga);
        }
        if (tape.requires_grad(b)) {
          // dB = A^T dC
          Tensor gb(tb.shape(), 0.0);
          std::vector<double> at(m * k);
          for (std::size_t bi = 0; bi < batch; ++bi) {
            transpose_into(ta.data() + bi * m * k, at.data(), m, k);
            kernels::gemm_acc(k, n, m, at.data(), gout.data() + bi * m * n, gb.data() + bi * k * n);
          }
          tape.accumulate(b, gb);
        }
      },
      "matmul");
}

Var spd_solve(Var a, Var r) {
  const Tensor& ta = a.value();
  const Tensor& tr = r.value();
  if (ta.rank() != tr.rank()) {
    throw ShapeError("spd_solve: rank " + std::to_string(ta.rank()) + " vs " + std::to_string(tr.rank()));
  }
  const MatDims da = mat_dims(ta, "spd_solve");
  const MatDims dr = mat_dims(tr, "spd_solve");
  if (da.rows != da.cols) throw ShapeError("spd_solve: matrix is not square " + shape_to_string(ta.shape()));
  if (da.batch != dr.batch) throw ShapeError("spd_solve: batch axis mismatch");
  if (dr.rows != da.rows) {
    throw ShapeError("spd_solve: right-hand side axis rows is " + std::to_string(dr.rows) + ", expected " +
                     std::to_string(da.rows));
  }
  const std::size_t k = da.rows, m = dr.cols;
  Tensor factors(ta.shape());
  Tensor out = tr;
  for (std::size_t bi = 0; bi < da.batch; ++bi) {
    double* l = factors.data() + bi * k * k;
    const double* src = ta.data() + bi * k * k;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) l[i * k + j] = 0.5 * (src[i * k + j] + src[j * k + i]);
    if (!cholesky(l, k)) {
      throw NumericError("spd_solve: matrix is not positive definite (condition estimate: inf)");
    }
    double dmin = l[0], dmax = l[0];
    for (std::size_t i = 1; i < k; ++i) {
      dmin = std::min(dmin, l[i * k + i]);
      dmax = std::max(dmax, l[i * k + i]);
    }
    const double cond = (dmax / dmin) * (dmax / dmin);
    if (!(cond < kMaxCondition)) {
      throw NumericError("spd_solve: matrix is numerically singular (condition estimate " + std::to_string(cond) +
                         ")");
    }
    cholesky_solve(l, k, out.data() + bi * k * m, m);
  }
  return a.tape->record(
      std::move(out), {a, r},
      [a, r, batch = da.batch, k, m, factors = std::move(factors)](Tape& tape, const Tensor& gout, const Tensor& y) {
        // gR = A^{-1} gY ; gA_sym = -gR Y^T, symmetrised because only sym(A) is read.
        Tensor gr = gout;
        for (std::size_t bi = 0; bi < batch; ++bi) cholesky_solve(factors.data() + bi * k * k, k, gr.data() + bi * k * m, m);
        if (tape.requires_grad(a)) {
          Tensor ga(a.value().shape(), 0.0);
          std::vector<double> yt(m * k);
          for (std::size_t bi = 0; bi < batch; ++bi) {
            transpose_into(y.data() + bi * k * m, yt.data(), k, m);
            std::vector<double> full(k * k, 0.0);
            kernels::gemm_acc(k, k, m, gr.data() + bi * k * m, yt.data(), full.data());
            double* gp = ga.data() + bi * k * k;
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) gp[i * k + j] = -0.5 * (full[i * k + j] + full[j * k + i]);
          }
          tape.accumulate(a, ga);
        }
        tape.accumulate(r, gr);
      },
      "spd_solve");
}

Var add_trace_ridge(Var a, double eps_reg) {
  const Tensor& ta = a.value();
  const MatDims d = mat_dims(ta, "add_trace_ridge");
  if (d.rows != d.cols) throw ShapeError("add_trace_ridge: matrix is not square " + shape_to_string(ta.shape()));
  const std::size_t k = d.rows;
  const double scale = eps_reg / static_cast<double>(k);
  Tensor out = ta;
  for (std::size_t bi = 0; bi < d.batch; ++bi) {
    double tr = 0.0;
    for (std::size_t i = 0; i < k; ++i) tr += ta[bi * k * k + i * k + i];
    for (std::size_t i = 0; i < k; ++i) out[bi * k * k + i * k + i] += scale * tr;
  }
  return a.tape->record(
      std::move(out), {a},
      [a, batch = d.batch, k, scale](Tape& tape, const Tensor& gout, const Tensor&) {
        Tensor g = gout;
        for (std::size_t bi = 0; bi < batch; ++bi) {
          double tr = 0.0;
          for (std::size_t i = 0; i < k; ++i) tr += gout[bi * k * k + i * k + i];
          for (std::size_t i = 0; i < k; ++i) g[bi * k * k + i * k + i] += scale * tr;
        }
        tape.accumulate(a, g);
      },
      "add_trace_ridge");
}

Var softmax_rows(Var x) {
  const Tensor& in = x.value();
  if (in.rank() == 0) throw ShapeError("softmax_rows: scalar input");
  const std::size_t n = in.shape().back();
  if (n == 0) throw ShapeError("softmax_rows: empty last axis");
  const std::size_t rows = in.size() / n;
  Tensor out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ip = in.data() + r * n;
    double* op = out.data() + r * n;
    double mx = ip[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, ip[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      op[i] = std::exp(ip[i] - mx);
      s += op[i];
    }
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < n; ++i) op[i] *= inv;
  }
  return x.tape->record(
      std::move(out), {x},
      [x, n, rows](Tape& tape, const Tensor& gout, const Tensor& y) {
        Tensor g(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yp = y.data() + r * n;
          const double* gp = gout.data() + r * n;
          const double s = kernels::dot(yp, gp, n);
          for (std::size_t i = 0; i < n; ++i) g[r * n + i] = yp[i] * (gp[i] - s);
        }
        tape.accumulate(x, g);
      },
      "softmax_rows");
}

Var mse_loss(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mse_loss");
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.empty()) throw ShapeError("mse_loss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += (ta[i] - tb[i]) * (ta[i] - tb[i]);
  const double inv_n = 1.0 / static_cast<double>(ta.size());
  return a.tape->record(
      Tensor::scalar(s * inv_n), {a, b},
      [a, b, inv_n](Tape& tape, const Tensor& gout, const Tensor&) {
        const Tensor& ta = a.value();
        const Tensor& tb = b.value();
        Tensor g(ta.shape());
        for (std::size_t i = 0; i < ta.size(); ++i) g[i] = 2.0 * inv_n * gout[0] * (ta[i] - tb[i]);
        if (tape.requires_grad(a)) tape.accumulate(a, g);
        if (tape.requires_grad(b)) {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = -g[i];
          tape.accumulate(b, g);
        }
      },
      "mse_loss");
}

Var weighted_sum(Var x, const Tensor& weights) {
  require_same_shape(x.value(), weights, "weighted_sum");
  const double s = kernels::dot(x.value().data(), weights.data(), weights.size());
  return x.tape->record(
      Tensor::scalar(s), {x},
      [x, weights](Tape& tape, const Tensor& gout, const Tensor&) {
        Tensor g(weights.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gout[0] * weights[i];
        tape.accumulate(x, g);
      },
      "weighted_sum");
}

}  // namespace tzlab
