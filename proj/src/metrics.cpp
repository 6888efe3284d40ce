#include "tzlab/metrics.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>

#include "tzlab/error.hpp"

namespace tzlab {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

void require_same(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(x.shape()) + " vs " +
                     shape_to_string(y.shape()));
  }
  if (x.empty()) throw ShapeError(std::string(op) + ": empty input");
}

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const double* src, std::size_t h, std::size_t w, const std::array<double, kWin>& g) {
  const std::size_t ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k) acc += g[k] * src[r * w + c + k];
      tmp[r * ow + c] = acc;
    }
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k) acc += g[k] * tmp[(r + k) * ow + c];
      out[r * ow + c] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Tensor& x, const Tensor& y) {
  require_same(x, y, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / (se / static_cast<double>(x.size())));
}

double ssim(const Tensor& x, const Tensor& y) {
  require_same(x, y, "ssim");
  if (x.rank() < 2) throw ShapeError("ssim: needs at least [H,W], got " + shape_to_string(x.shape()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (h < kWin || w < kWin) {
    throw ShapeError("ssim: image must be at least 11x11, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t planes = x.size() / (h * w);
  const auto g = gaussian_window();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> xx(h * w), yy(h * w), xy(h * w);
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* a = x.data() + p * h * w;
    const double* b = y.data() + p * h * w;
    for (std::size_t i = 0; i < h * w; ++i) {
      xx[i] = a[i] * a[i];
      yy[i] = b[i] * b[i];
      xy[i] = a[i] * b[i];
    }
    const auto mx = filter_valid(a, h, w, g);
    const auto my = filter_valid(b, h, w, g);
    const auto sxx = filter_valid(xx.data(), h, w, g);
    const auto syy = filter_valid(yy.data(), h, w, g);
    const auto sxy = filter_valid(xy.data(), h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mx.size());
  }
  const double s = total / static_cast<double>(planes);
  // Identical inputs may round a hair away from 1; report the exact value.
  return x.identical(y) ? 1.0 : s;
}

Tensor clamp01(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::string format_metric(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace tzlab
