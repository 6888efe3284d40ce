#include "tzlab/tomo.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <string>

#include "tzlab/error.hpp"

namespace tzlab::tomo {

namespace {

constexpr double kPi = std::numbers::pi;

struct RayFrame {
  double cos_t;
  double sin_t;
  double center;       // (N-1)/2
  double det_center;   // (D-1)/2
  std::size_t steps;   // samples per ray
  double step_origin;  // s of the first sample
};

RayFrame ray_frame(std::size_t n, std::size_t d, double angle_deg) {
  const double t = angle_deg * kPi / 180.0;
  RayFrame f{};
  f.cos_t = std::cos(t);
  f.sin_t = std::sin(t);
  // Snap exact multiples of 90 degrees so axis-aligned views sample pixel
  // centres exactly.
  if (std::abs(f.cos_t) < 1e-15) f.cos_t = 0.0;
  if (std::abs(f.sin_t) < 1e-15) f.sin_t = 0.0;
  f.center = 0.5 * static_cast<double>(n - 1);
  f.det_center = 0.5 * static_cast<double>(d - 1);
  f.steps = std::max(d, diagonal_detector_count(n));
  f.step_origin = -0.5 * static_cast<double>(f.steps - 1);
  return f;
}

// Visits the bilinear taps of sample (x, y) in image coordinates.
template <typename Fn>
inline void bilinear_taps(double x, double y, const RayFrame& f, std::size_t n, Fn&& fn) {
  const double col = x + f.center;
  const double row = f.center - y;
  if (col <= -1.0 || row <= -1.0 || col >= static_cast<double>(n) || row >= static_cast<double>(n)) return;
  const double c0f = std::floor(col);
  const double r0f = std::floor(row);
  const double wc = col - c0f;
  const double wr = row - r0f;
  const long c0 = static_cast<long>(c0f);
  const long r0 = static_cast<long>(r0f);
  const long nn = static_cast<long>(n);
  auto tap = [&](long r, long c, double w) {
    if (w != 0.0 && r >= 0 && c >= 0 && r < nn && c < nn) fn(static_cast<std::size_t>(r * nn + c), w);
  };
  tap(r0, c0, (1.0 - wr) * (1.0 - wc));
  tap(r0, c0 + 1, (1.0 - wr) * wc);
  tap(r0 + 1, c0, wr * (1.0 - wc));
  tap(r0 + 1, c0 + 1, wr * wc);
}

std::size_t require_square(const Tensor& slice, const char* op) {
  if (slice.rank() != 2 || slice.dim(0) != slice.dim(1)) {
    throw ShapeError(std::string(op) + ": slice must be square [N,N], got " + shape_to_string(slice.shape()));
  }
  if (slice.dim(0) == 0) throw ShapeError(std::string(op) + ": empty slice");
  return slice.dim(0);
}

Tensor view_rows(const Tensor& view) {
  if (view.rank() == 3 && view.dim(0) == 1) return view.reshaped({view.dim(1), view.dim(2)});
  if (view.rank() == 2) return view;
  throw ShapeError("reconstruct_volume: view must be [1,H,W] or [H,W], got " + shape_to_string(view.shape()));
}

}  // namespace

void Sinogram::validate() const {
  if (data.rank() != 2) throw ShapeError("sinogram: data must be [A,D], got " + shape_to_string(data.shape()));
  if (data.dim(0) == 0) throw ShapeError("sinogram: needs at least one angle");
  if (angles_deg.size() != data.dim(0)) {
    throw ShapeError("sinogram: " + std::to_string(angles_deg.size()) + " angles for " +
                     std::to_string(data.dim(0)) + " rows");
  }
  for (std::size_t i = 0; i < angles_deg.size(); ++i) {
    if (!(angles_deg[i] >= 0.0 && angles_deg[i] < 360.0)) throw ShapeError("sinogram: angle outside [0,360)");
    if (i && !(angles_deg[i] > angles_deg[i - 1])) throw ShapeError("sinogram: angles must strictly increase");
  }
  if (image_size == 0) throw ShapeError("sinogram: image_size must be positive");
  if (!(pixel_pitch > 0.0)) throw ShapeError("sinogram: pixel_pitch must be positive");
}

std::size_t diagonal_detector_count(std::size_t n) {
  const double diag = std::sqrt(2.0) * static_cast<double>(n);
  std::size_t d = static_cast<std::size_t>(std::ceil(diag));
  if ((d - n) % 2 != 0) ++d;
  return d;
}

std::vector<double> uniform_angles(std::size_t count, double step_deg) {
  std::vector<double> a(count);
  for (std::size_t i = 0; i < count; ++i) a[i] = step_deg * static_cast<double>(i);
  return a;
}

void project_angle(const Tensor& slice, double angle_deg, std::span<double> row, double pixel_pitch) {
  const std::size_t n = require_square(slice, "radon");
  const RayFrame f = ray_frame(n, row.size(), angle_deg);
  const double* img = slice.data();
  for (std::size_t d = 0; d < row.size(); ++d) {
    const double t = static_cast<double>(d) - f.det_center;
    double acc = 0.0;
    for (std::size_t k = 0; k < f.steps; ++k) {
      const double s = f.step_origin + static_cast<double>(k);
      const double x = t * f.cos_t - s * f.sin_t;
      const double y = t * f.sin_t + s * f.cos_t;
      bilinear_taps(x, y, f, n, [&](std::size_t idx, double w) { acc += w * img[idx]; });
    }
    row[d] = acc * pixel_pitch;
  }
}

void project_angle_adjoint(std::span<const double> row, double angle_deg, Tensor& image, double pixel_pitch) {
  const std::size_t n = require_square(image, "radon adjoint");
  const RayFrame f = ray_frame(n, row.size(), angle_deg);
  double* img = image.data();
  for (std::size_t d = 0; d < row.size(); ++d) {
    const double v = row[d] * pixel_pitch;
    if (v == 0.0) continue;
    const double t = static_cast<double>(d) - f.det_center;
    for (std::size_t k = 0; k < f.steps; ++k) {
      const double s = f.step_origin + static_cast<double>(k);
      const double x = t * f.cos_t - s * f.sin_t;
      const double y = t * f.sin_t + s * f.cos_t;
      bilinear_taps(x, y, f, n, [&](std::size_t idx, double w) { img[idx] += w * v; });
    }
  }
}

Sinogram radon(const Tensor& slice, std::span<const double> angles_deg, std::size_t detector_count,
               double pixel_pitch) {
  const std::size_t n = require_square(slice, "radon");
  if (angles_deg.empty()) throw ShapeError("radon: empty angle list");
  const std::size_t d = detector_count ? detector_count : diagonal_detector_count(n);
  Sinogram s;
  s.data = Tensor({angles_deg.size(), d}, 0.0);
  s.angles_deg.assign(angles_deg.begin(), angles_deg.end());
  s.pixel_pitch = pixel_pitch;
  s.image_size = n;
  for (std::size_t a = 0; a < angles_deg.size(); ++a) {
    project_angle(slice, angles_deg[a], std::span<double>(s.data.data() + a * d, d), pixel_pitch);
  }
  return s;
}

std::size_t ramp_padded_length(std::size_t detector_count) {
  std::size_t m = 1;
  while (m < 2 * detector_count) m <<= 1;
  return m;
}

std::vector<double> ramp_response(std::size_t m, RampWindow window) {
  // Circular spatial kernel on the padded grid; symmetric, so its DFT is real.
  std::vector<double> h(m, 0.0);
  h[0] = 0.25;
  for (std::size_t i = 1; i < m; ++i) {
    const long n = i <= m / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(m);
    if (n % 2 != 0) h[i] = -1.0 / (kPi * kPi * static_cast<double>(n) * static_cast<double>(n));
  }
  std::vector<std::complex<double>> spec(m / 2 + 1);
  fftw_plan plan =
      fftw_plan_dft_r2c_1d(static_cast<int>(m), h.data(), reinterpret_cast<fftw_complex*>(spec.data()), FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  std::vector<double> resp(m / 2 + 1);
  for (std::size_t k = 0; k < resp.size(); ++k) {
    double r = spec[k].real();
    if (window == RampWindow::Hann) r *= 0.5 * (1.0 + std::cos(2.0 * kPi * static_cast<double>(k) / static_cast<double>(m)));
    resp[k] = r;
  }
  resp[0] = 0.0;
  return resp;
}

Sinogram ramp_filter(const Sinogram& sino, RampWindow window) {
  sino.validate();
  const std::size_t a_count = sino.angle_count();
  const std::size_t d = sino.detector_count();
  if (d < 8) throw ShapeError("ramp_filter: needs at least 8 detector bins, got " + std::to_string(d));
  const std::size_t m = ramp_padded_length(d);
  const std::vector<double> resp = ramp_response(m, window);

  std::vector<double> buf(m);
  std::vector<std::complex<double>> spec(m / 2 + 1);
  auto* cspec = reinterpret_cast<fftw_complex*>(spec.data());
  fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(m), buf.data(), cspec, FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_c2r_1d(static_cast<int>(m), cspec, buf.data(), FFTW_ESTIMATE);

  Sinogram out = sino;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t a = 0; a < a_count; ++a) {
    std::fill(buf.begin(), buf.end(), 0.0);
    std::copy_n(sino.data.data() + a * d, d, buf.begin());
    fftw_execute(fwd);
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= resp[k];
    fftw_execute(inv);
    for (std::size_t i = 0; i < d; ++i) out.data[a * d + i] = buf[i] * inv_m;
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);
  return out;
}

Tensor fbp(const Sinogram& sino, RampWindow window) {
  const Sinogram filtered = ramp_filter(sino, window);
  const std::size_t n = sino.image_size;
  const std::size_t d = sino.detector_count();
  const double center = 0.5 * static_cast<double>(n - 1);
  const double det_center = 0.5 * static_cast<double>(d - 1);
  Tensor image({n, n}, 0.0);
  for (std::size_t a = 0; a < sino.angle_count(); ++a) {
    const double t = sino.angles_deg[a] * kPi / 180.0;
    double c = std::cos(t), s = std::sin(t);
    if (std::abs(c) < 1e-15) c = 0.0;
    if (std::abs(s) < 1e-15) s = 0.0;
    const double* row = filtered.data.data() + a * d;
    for (std::size_t r = 0; r < n; ++r) {
      const double y = center - static_cast<double>(r);
      for (std::size_t col = 0; col < n; ++col) {
        const double x = static_cast<double>(col) - center;
        const double pos = x * c + y * s + det_center;
        if (pos < 0.0 || pos > static_cast<double>(d - 1)) continue;
        const std::size_t i0 = std::min(static_cast<std::size_t>(pos), d - 1);
        const std::size_t i1 = std::min(i0 + 1, d - 1);
        const double w = pos - static_cast<double>(i0);
        image[r * n + col] += (1.0 - w) * row[i0] + w * row[i1];
      }
    }
  }
  // The sinogram carries one factor of the pitch from the line integrals.
  const double scale = kPi / (static_cast<double>(sino.angle_count()) * sino.pixel_pitch);
  for (double& v : image.values()) v *= scale;
  return image;
}

Tensor sart(const Sinogram& sino, const SartOptions& opts, std::vector<double>* residuals) {
  sino.validate();
  if (opts.iters < 1) throw ShapeError("sart: iters must be >= 1");
  if (!(opts.relax > 0.0 && opts.relax <= 1.0)) throw ShapeError("sart: relax must lie in (0,1]");
  const std::size_t n = sino.image_size;
  const std::size_t d = sino.detector_count();
  const std::size_t a_count = sino.angle_count();
  const double pitch = sino.pixel_pitch;

  // Ray sums A 1 and per-angle column sums A_a^T 1.
  const Tensor ones({n, n}, 1.0);
  std::vector<std::vector<double>> row_sums(a_count, std::vector<double>(d));
  std::vector<Tensor> col_sums(a_count, Tensor({n, n}, 0.0));
  const std::vector<double> unit_rays(d, 1.0);
  for (std::size_t a = 0; a < a_count; ++a) {
    project_angle(ones, sino.angles_deg[a], row_sums[a], pitch);
    project_angle_adjoint(unit_rays, sino.angles_deg[a], col_sums[a], pitch);
  }

  Tensor x({n, n}, 0.0);
  std::vector<double> proj(d), resid(d);
  for (std::size_t it = 0; it < opts.iters; ++it) {
    for (std::size_t a = 0; a < a_count; ++a) {
      project_angle(x, sino.angles_deg[a], proj, pitch);
      for (std::size_t i = 0; i < d; ++i) {
        const double w = row_sums[a][i];
        resid[i] = w > 1e-12 ? (sino.data[a * d + i] - proj[i]) / w : 0.0;
      }
      Tensor update({n, n}, 0.0);
      project_angle_adjoint(resid, sino.angles_deg[a], update, pitch);
      const Tensor& cs = col_sums[a];
      for (std::size_t j = 0; j < n * n; ++j) {
        if (cs[j] > 1e-12) x[j] += opts.relax * update[j] / cs[j];
      }
    }
    for (double& v : x.values()) v = std::max(v, 0.0);
    if (residuals) {
      double r2 = 0.0;
      for (std::size_t a = 0; a < a_count; ++a) {
        project_angle(x, sino.angles_deg[a], proj, pitch);
        for (std::size_t i = 0; i < d; ++i) {
          const double e = proj[i] - sino.data[a * d + i];
          r2 += e * e;
        }
      }
      residuals->push_back(std::sqrt(r2));
    }
  }
  return x;
}

Volume reconstruct_volume(std::span<const Tensor> views, std::span<const double> angles_deg, const VolumeOptions& opts) {
  if (views.empty()) throw ShapeError("reconstruct_volume: no views");
  if (views.size() != angles_deg.size()) {
    throw ShapeError("reconstruct_volume: " + std::to_string(views.size()) + " views but " +
                     std::to_string(angles_deg.size()) + " angles");
  }
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return angles_deg[a] < angles_deg[b]; });

  std::vector<Tensor> rows;
  rows.reserve(views.size());
  for (std::size_t i : order) rows.push_back(view_rows(views[i]));
  const Shape& shape0 = rows.front().shape();
  for (const Tensor& r : rows) {
    if (r.shape() != shape0) {
      throw ShapeError("reconstruct_volume: inconsistent view shapes " + shape_to_string(shape0) + " vs " +
                       shape_to_string(r.shape()));
    }
  }
  const std::size_t h = shape0[0];
  const std::size_t w = shape0[1];

  Sinogram sino;
  sino.data = Tensor({views.size(), w}, 0.0);
  sino.pixel_pitch = opts.pixel_pitch;
  sino.image_size = w;
  for (std::size_t i : order) sino.angles_deg.push_back(angles_deg[i]);

  Volume vol;
  vol.voxel_pitch = opts.pixel_pitch;
  vol.grid = Tensor({h, w, w}, 0.0);
  for (std::size_t z = 0; z < h; ++z) {
    for (std::size_t a = 0; a < rows.size(); ++a) std::copy_n(rows[a].data() + z * w, w, sino.data.data() + a * w);
    const Tensor slice = opts.method == ReconMethod::Fbp ? fbp(sino, opts.window) : sart(sino, opts.sart);
    std::copy_n(slice.data(), w * w, vol.grid.data() + z * w * w);
  }
  return vol;
}

}  // namespace tzlab::tomo
