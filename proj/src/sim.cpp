#include "tzlab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tzlab/error.hpp"
#include "tzlab/tomo.hpp"

namespace tzlab::sim {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Complex exponentials exp(-i 2 pi f t_k) dt for a fixed band table and grid.
class BandProjector {
 public:
  BandProjector(const BandTable& bands, std::size_t samples, double dt) : bands_(bands.frequencies.size()), n_(samples) {
    const double nyquist = 0.5 / dt;
    re_.resize(bands_ * n_);
    im_.resize(bands_ * n_);
    for (std::size_t b = 0; b < bands_; ++b) {
      const double f = bands.frequencies[b];
      if (!(f > 0.0 && f < nyquist)) {
        throw ConfigError("band " + std::to_string(f) + " THz lies outside (0, " + std::to_string(nyquist) +
                          ") THz Nyquist range");
      }
      for (std::size_t k = 0; k < n_; ++k) {
        const double ph = -2.0 * kPi * f * static_cast<double>(k) * dt;
        re_[b * n_ + k] = std::cos(ph) * dt;
        im_[b * n_ + k] = std::sin(ph) * dt;
      }
    }
  }

  std::vector<std::complex<double>> apply(const std::vector<double>& x) const {
    if (x.size() != n_) throw ShapeError("band projector: trace length changed");
    std::vector<std::complex<double>> out(bands_);
    for (std::size_t b = 0; b < bands_; ++b) {
      double re = 0.0, im = 0.0;
      const double* cr = re_.data() + b * n_;
      const double* ci = im_.data() + b * n_;
      for (std::size_t k = 0; k < n_; ++k) {
        re += x[k] * cr[k];
        im += x[k] * ci[k];
      }
      out[b] = {re, im};
    }
    return out;
  }

 private:
  std::size_t bands_, n_;
  std::vector<double> re_, im_;
};

void require_trace(const TimeTrace& t, const char* op) {
  if (t.samples.empty()) throw ShapeError(std::string(op) + ": empty trace");
  if (!(t.dt > 0.0)) throw ConfigError(std::string(op) + ": dt must be positive");
}

// Index (with parabolic refinement) of the largest signed sample.
double positive_peak_time(const TimeTrace& t) {
  const auto it = std::max_element(t.samples.begin(), t.samples.end());
  const std::size_t k = static_cast<std::size_t>(it - t.samples.begin());
  double offset = 0.0;
  if (k > 0 && k + 1 < t.samples.size()) {
    const double a = t.samples[k - 1], b = t.samples[k], c = t.samples[k + 1];
    const double den = a - 2.0 * b + c;
    if (den < 0.0) offset = 0.5 * (a - c) / den;
  }
  return (static_cast<double>(k) + offset) * t.dt;
}

struct Rect {
  double cx, cy, rx, ry;  // pixel units relative to the slice centre
};

class Painter {
 public:
  explicit Painter(Phantom& p) : p_(p), c_(0.5 * static_cast<double>(p.size - 1)) {}

  double inscribed() const { return 0.5 * static_cast<double>(p_.size) - 1.0; }

  void ellipsoid(double cx, double cy, double cz, double rx, double ry, double rz, std::uint8_t label) {
    for (std::size_t z = 0; z < p_.depth; ++z)
      for (std::size_t r = 0; r < p_.size; ++r)
        for (std::size_t c = 0; c < p_.size; ++c) {
          const double x = (static_cast<double>(c) - c_ - cx) / rx;
          const double y = (c_ - static_cast<double>(r) - cy) / ry;
          const double zz = (static_cast<double>(z) - cz) / rz;
          if (x * x + y * y + zz * zz <= 1.0) set(z, r, c, label);
        }
  }

  void cylinder(double cx, double cy, double radius, std::size_t z0, std::size_t z1, std::uint8_t label) {
    for (std::size_t z = z0; z < z1; ++z)
      for (std::size_t r = 0; r < p_.size; ++r)
        for (std::size_t c = 0; c < p_.size; ++c) {
          const double x = static_cast<double>(c) - c_ - cx;
          const double y = c_ - static_cast<double>(r) - cy;
          if (x * x + y * y <= radius * radius) set(z, r, c, label);
        }
  }

  void box(const Rect& b, std::size_t z0, std::size_t z1, std::uint8_t label) {
    for (std::size_t z = z0; z < z1; ++z)
      for (std::size_t r = 0; r < p_.size; ++r)
        for (std::size_t c = 0; c < p_.size; ++c) {
          const double x = static_cast<double>(c) - c_ - b.cx;
          const double y = c_ - static_cast<double>(r) - b.cy;
          if (std::abs(x) <= b.rx && std::abs(y) <= b.ry) set(z, r, c, label);
        }
  }

 private:
  void set(std::size_t z, std::size_t r, std::size_t c, std::uint8_t label) {
    p_.labels[(z * p_.size + r) * p_.size + c] = label;
  }

  Phantom& p_;
  double c_;
};

std::uint8_t pick_label(std::mt19937_64& rng, std::size_t materials) {
  return static_cast<std::uint8_t>(1 + std::uniform_int_distribution<std::size_t>(0, materials - 1)(rng));
}

void paint(Phantom& p, const PhantomSpec& spec) {
  Painter paint(p);
  std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.kind)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double big_r = paint.inscribed();
  const double s = static_cast<double>(p.size);
  const double d = static_cast<double>(p.depth);
  const std::size_t m = p.materials.size();
  auto z_range = [&](double lo_frac, double hi_frac) {
    const std::size_t z0 = static_cast<std::size_t>(std::floor(d * lo_frac));
    const std::size_t z1 = std::max(z0 + 1, static_cast<std::size_t>(std::ceil(d * hi_frac)));
    return std::pair{z0, std::min(z1, p.depth)};
  };

  switch (spec.kind) {
    case PhantomKind::Disk: {
      const double r = std::min(spec.radius_frac * s, big_r);
      if (r <= 0.0) throw ConfigError("disk phantom: radius must be positive");
      const auto [z0, z1] = z_range(0.125, 0.875);
      paint.cylinder(0.0, 0.0, r, z0, z1, 1);
      break;
    }
    case PhantomKind::Bars: {
      const int count = 2 + static_cast<int>(rng() % 3);
      for (int i = 0; i < count; ++i) {
        const double rx = s * (0.04 + 0.08 * u01(rng));
        const double ry = s * (0.04 + 0.12 * u01(rng));
        const double reach = big_r - std::hypot(rx, ry);
        if (reach <= 0.0) continue;
        const double ang = 2.0 * kPi * u01(rng), rad = reach * std::sqrt(u01(rng));
        const auto [z0, z1] = z_range(0.05 + 0.2 * u01(rng), 0.7 + 0.25 * u01(rng));
        paint.box({rad * std::cos(ang), rad * std::sin(ang), rx, ry}, z0, z1, pick_label(rng, m));
      }
      break;
    }
    case PhantomKind::BlobComposite: {
      const int count = 3 + static_cast<int>(rng() % 3);
      for (int i = 0; i < count; ++i) {
        const double rx = s * (0.08 + 0.12 * u01(rng));
        const double ry = s * (0.08 + 0.12 * u01(rng));
        const double rz = d * (0.1 + 0.2 * u01(rng));
        const double reach = big_r - std::max(rx, ry);
        if (reach <= 0.0) continue;
        const double ang = 2.0 * kPi * u01(rng), rad = reach * std::sqrt(u01(rng));
        const double cz = d * (0.25 + 0.5 * u01(rng));
        paint.ellipsoid(rad * std::cos(ang), rad * std::sin(ang), cz, rx, ry, rz, pick_label(rng, m));
      }
      break;
    }
    case PhantomKind::Procedural: {
      // A body (cylinder or box) with vacuum holes and material inclusions.
      const auto [z0, z1] = z_range(0.1 + 0.1 * u01(rng), 0.8 + 0.1 * u01(rng));
      const std::uint8_t body = pick_label(rng, m);
      if (u01(rng) < 0.5) {
        paint.cylinder(0.0, 0.0, big_r * (0.5 + 0.4 * u01(rng)), z0, z1, body);
      } else {
        const double half = big_r * (0.35 + 0.3 * u01(rng));
        const double rx = std::min(half, big_r / std::sqrt(2.0));
        const double ry = std::min(half * (0.6 + 0.4 * u01(rng)), big_r / std::sqrt(2.0));
        paint.box({0.0, 0.0, rx, ry}, z0, z1, body);
      }
      const int inclusions = 1 + static_cast<int>(rng() % 4);
      for (int i = 0; i < inclusions; ++i) {
        const double r = s * (0.04 + 0.08 * u01(rng));
        const double ang = 2.0 * kPi * u01(rng), rad = 0.5 * big_r * u01(rng);
        const double cz = static_cast<double>(z0) + static_cast<double>(z1 - z0) * u01(rng);
        const std::uint8_t label = u01(rng) < 0.5 ? 0 : pick_label(rng, m);
        paint.ellipsoid(rad * std::cos(ang), rad * std::sin(ang), cz, r, r, r * (1.0 + 2.0 * u01(rng)), label);
      }
      break;
    }
  }
}

Tensor slice_property(const Phantom& p, std::size_t z, const std::vector<double>& table) {
  Tensor t({p.size, p.size}, 0.0);
  const std::size_t off = z * p.size * p.size;
  for (std::size_t i = 0; i < p.size * p.size; ++i) t[i] = table[p.labels[off + i]];
  return t;
}

void blur_complex(std::vector<double>& re, std::vector<double>& im, std::size_t h, std::size_t w, double sigma) {
  gaussian_blur(re.data(), h, w, sigma);
  gaussian_blur(im.data(), h, w, sigma);
}

double mean_square(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s / static_cast<double>(n);
}

void flip_planes(Tensor& t) {
  const std::size_t w = t.dim(t.rank() - 1);
  const std::size_t rows = t.size() / w;
  for (std::size_t r = 0; r < rows; ++r) std::reverse(t.data() + r * w, t.data() + (r + 1) * w);
}

// Bilinear rescale of every plane of [C,H,W] to [C,oh,ow], then a crop of
// size crop x crop starting at (top,left) with replicated edges.
Tensor rescale_crop(const Tensor& t, double scale, std::size_t oh, std::size_t ow, std::ptrdiff_t top,
                    std::ptrdiff_t left, std::size_t crop, bool flip) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor out({c, crop, crop});
  auto src = [&](std::ptrdiff_t o, std::size_t n_out, std::size_t n_in) {
    const std::ptrdiff_t oc = std::clamp<std::ptrdiff_t>(o, 0, static_cast<std::ptrdiff_t>(n_out) - 1);
    const double p = (static_cast<double>(oc) + 0.5) / scale - 0.5;
    return std::clamp(p, 0.0, static_cast<double>(n_in - 1));
  };
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* in = t.data() + ch * h * w;
    for (std::size_t r = 0; r < crop; ++r) {
      const double y = src(top + static_cast<std::ptrdiff_t>(r), oh, h);
      const std::size_t y0 = static_cast<std::size_t>(y);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double wy = y - static_cast<double>(y0);
      for (std::size_t col = 0; col < crop; ++col) {
        const double x = src(left + static_cast<std::ptrdiff_t>(col), ow, w);
        const std::size_t x0 = static_cast<std::size_t>(x);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double wx = x - static_cast<double>(x0);
        double v = in[y0 * w + x0];
        if (wx != 0.0 || wy != 0.0) {
          v = (1 - wy) * ((1 - wx) * in[y0 * w + x0] + wx * in[y0 * w + x1]) +
              wy * ((1 - wx) * in[y1 * w + x0] + wx * in[y1 * w + x1]);
        }
        out[(ch * crop + r) * crop + (flip ? crop - 1 - col : col)] = v;
      }
    }
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ b);
}

void Material::validate() const {
  if (!(n >= 1.0 && n <= 4.0)) throw ConfigError("material '" + name + "': n must lie in [1,4]");
  if (!(alpha >= 0.0 && alpha <= 10.0)) throw ConfigError("material '" + name + "': alpha must lie in [0,10] 1/mm");
}

Material hips() { return {"hips", 1.55, 0.05}; }
Material filled_resin() { return {"filled_resin", 1.9, 0.2}; }

void Phantom::validate() const {
  if (depth == 0 || size < 4) throw ConfigError("phantom: degenerate grid");
  if (labels.size() != depth * size * size) throw ShapeError("phantom: label grid size mismatch");
  if (!(voxel_pitch > 0.0)) throw ConfigError("phantom: voxel pitch must be positive");
  if (materials.size() > 255) throw ConfigError("phantom: at most 255 materials");
  for (const Material& m : materials) m.validate();
  for (std::uint8_t l : labels)
    if (l > materials.size()) throw ConfigError("phantom: label refers to a missing material");
}

PhantomKind parse_phantom_kind(const std::string& s) {
  if (s == "disk") return PhantomKind::Disk;
  if (s == "bars") return PhantomKind::Bars;
  if (s == "blob-composite") return PhantomKind::BlobComposite;
  if (s == "procedural-seeded") return PhantomKind::Procedural;
  throw ConfigError("unknown phantom kind '" + s + "'");
}

std::string to_string(PhantomKind k) {
  switch (k) {
    case PhantomKind::Disk: return "disk";
    case PhantomKind::Bars: return "bars";
    case PhantomKind::BlobComposite: return "blob-composite";
    case PhantomKind::Procedural: return "procedural-seeded";
  }
  return "?";
}

Phantom make_phantom(const PhantomSpec& spec) {
  Phantom p;
  p.depth = spec.depth;
  p.size = spec.size;
  p.voxel_pitch = spec.voxel_pitch;
  p.materials = spec.materials;
  if (p.depth == 0 || p.size < 4) {
    throw ConfigError("phantom: size must be >= 4 and depth >= 1, got " + std::to_string(p.size) + "x" +
                      std::to_string(p.depth));
  }
  p.labels.assign(p.depth * p.size * p.size, 0);
  for (const Material& m : p.materials) m.validate();
  if (p.materials.empty()) return p;
  paint(p, spec);
  if (std::all_of(p.labels.begin(), p.labels.end(), [](std::uint8_t l) { return l == 0; })) {
    // Every random shape fell outside the grid; fall back to a centred cylinder.
    Painter(p).cylinder(0.0, 0.0, 0.25 * static_cast<double>(p.size), 0, p.depth, 1);
  }
  p.validate();
  return p;
}

PathMaps path_integrals(const Phantom& p, double angle_deg) {
  p.validate();
  std::vector<double> present(p.materials.size() + 1, 1.0), excess(p.materials.size() + 1, 0.0),
      alpha(p.materials.size() + 1, 0.0);
  present[0] = 0.0;
  for (std::size_t i = 0; i < p.materials.size(); ++i) {
    excess[i + 1] = p.materials[i].n - 1.0;
    alpha[i + 1] = p.materials[i].alpha;
  }
  PathMaps m{Tensor({p.depth, p.size}, 0.0), Tensor({p.depth, p.size}, 0.0), Tensor({p.depth, p.size}, 0.0)};
  for (std::size_t z = 0; z < p.depth; ++z) {
    const std::size_t off = z * p.size * p.size;
    if (std::all_of(p.labels.begin() + off, p.labels.begin() + off + p.size * p.size,
                    [](std::uint8_t l) { return l == 0; }))
      continue;
    auto row = [&](Tensor& t) { return std::span<double>(t.data() + z * p.size, p.size); };
    tomo::project_angle(slice_property(p, z, present), angle_deg, row(m.thickness), p.voxel_pitch);
    tomo::project_angle(slice_property(p, z, excess), angle_deg, row(m.excess_path), p.voxel_pitch);
    tomo::project_angle(slice_property(p, z, alpha), angle_deg, row(m.absorption), p.voxel_pitch);
  }
  return m;
}

double PulseModel::peak_frequency() const { return 1.0 / (2.0 * kPi * sigma); }

double PulseModel::value(double t) const {
  const double u = (t - t0) / sigma;
  return -u * std::exp(0.5 - 0.5 * u * u);
}

TimeTrace PulseModel::reference() const { return synth_trace(*this, 0.0, 0.0); }

TimeTrace synth_trace(const PulseModel& pulse, double excess_path_mm, double absorption, double snr_db,
                      std::mt19937_64* rng) {
  if (pulse.samples < 256) throw ConfigError("trace needs at least 256 samples");
  if (!(pulse.dt > 0.0) || !(pulse.sigma > 0.0)) throw ConfigError("pulse dt and sigma must be positive");
  if (!(snr_db > 0.0)) throw ConfigError("snr_db must be positive, got " + std::to_string(snr_db));
  if (excess_path_mm < 0.0 || absorption < 0.0) throw ConfigError("path integrals must be non-negative");
  const double delay = excess_path_mm / kSpeedOfLight;
  const double gain = std::exp(-absorption);
  TimeTrace t;
  t.dt = pulse.dt;
  t.samples.resize(pulse.samples);
  for (std::size_t k = 0; k < pulse.samples; ++k) t.samples[k] = gain * pulse.value(static_cast<double>(k) * pulse.dt - delay);
  if (std::isfinite(snr_db)) {
    if (!rng) throw ConfigError("synth_trace: noise requested without a random stream");
    std::normal_distribution<double> noise(0.0, std::pow(10.0, -snr_db / 20.0));
    for (double& v : t.samples) v += noise(*rng);
  }
  return t;
}

double time_max(const TimeTrace& trace) {
  require_trace(trace, "time_max");
  double m = 0.0;
  for (double v : trace.samples) m = std::max(m, std::abs(v));
  return m;
}

void BandTable::validate() const {
  if (frequencies.empty()) throw ConfigError("band table is empty");
  for (std::size_t i = 0; i < frequencies.size(); ++i) {
    if (!(frequencies[i] >= 0.3 && frequencies[i] <= 1.3)) throw ConfigError("band outside [0.3, 1.3] THz");
    if (i && !(frequencies[i] > frequencies[i - 1])) throw ConfigError("band table must be strictly ascending");
  }
}

BandTable BandTable::standard() {
  return {{0.380, 0.448, 0.557, 0.621, 0.916, 0.970, 0.988, 1.097, 1.113, 1.163, 1.208, 1.229}};
}

std::vector<std::complex<double>> band_coefficients(const TimeTrace& trace, const BandTable& bands) {
  require_trace(trace, "extract_bands");
  return BandProjector(bands, trace.samples.size(), trace.dt).apply(trace.samples);
}

double wrap_phase(double phi) {
  double w = std::remainder(phi, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

BandFeatures extract_bands(const TimeTrace& trace, const TimeTrace& reference, const BandTable& bands, bool unwrap) {
  require_trace(reference, "extract_bands");
  if (trace.samples.size() != reference.samples.size() || trace.dt != reference.dt) {
    throw ShapeError("extract_bands: trace and reference grids differ");
  }
  const BandProjector proj(bands, trace.samples.size(), trace.dt);
  const auto c = proj.apply(trace.samples);
  const auto r = proj.apply(reference.samples);
  BandFeatures out;
  const double delay = unwrap ? positive_peak_time(trace) - positive_peak_time(reference) : 0.0;
  for (std::size_t b = 0; b < c.size(); ++b) {
    out.amplitude.push_back(std::abs(c[b]) / std::abs(r[b]));
    double phi = wrap_phase(std::arg(r[b] * std::conj(c[b])));
    if (unwrap) {
      const double guess = 2.0 * kPi * bands.frequencies[b] * delay;
      phi += 2.0 * kPi * std::round((guess - phi) / (2.0 * kPi));
    }
    out.phase.push_back(phi);
  }
  return out;
}

double psf_sigma_px(double f_thz, double k, double pixel_pitch) {
  if (!(f_thz > 0.0) || !(pixel_pitch > 0.0) || k < 0.0) throw ConfigError("psf: invalid frequency, pitch or k");
  return k * (kSpeedOfLight / f_thz) / pixel_pitch;
}

void gaussian_blur(double* plane, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return;
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (long i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  std::vector<double> tmp(h * w);
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (long r = 0; r < lh; ++r)
    for (long c = 0; c < lw; ++c) {
      double acc = 0.0;
      for (long i = -radius; i <= radius; ++i) acc += k[i + radius] * plane[r * lw + std::clamp(c + i, 0L, lw - 1)];
      tmp[r * lw + c] = acc;
    }
  for (long r = 0; r < lh; ++r)
    for (long c = 0; c < lw; ++c) {
      double acc = 0.0;
      for (long i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[std::clamp(r + i, 0L, lh - 1) * lw + c];
      plane[r * lw + c] = acc;
    }
}

void SpectralProjection::validate() const {
  if (time_max.rank() != 3 || time_max.dim(0) != 1) throw ShapeError("projection: time_max must be [1,H,W]");
  const std::size_t h = height(), w = width();
  const Shape bands_shape{bands.size(), h, w};
  if (amplitude.shape() != bands_shape || phase.shape() != bands_shape) {
    throw ShapeError("projection: amplitude/phase must be " + shape_to_string(bands_shape));
  }
  if (clean_gt.shape() != time_max.shape()) throw ShapeError("projection: clean_gt must match time_max");
}

SpectralProjection degrade(const PathMaps& maps, const BandTable& bands, const DegradeOptions& opts, double view_angle,
                           double pixel_pitch, std::mt19937_64& rng) {
  bands.validate();
  const std::size_t h = maps.thickness.dim(0), w = maps.thickness.dim(1), n = h * w, nb = bands.frequencies.size();
  if (maps.excess_path.shape() != maps.thickness.shape() || maps.absorption.shape() != maps.thickness.shape()) {
    throw ShapeError("degrade: path maps disagree in shape");
  }
  if (!(opts.snr_db > 0.0)) throw ConfigError("degrade: snr_db must be positive");
  const double tm_sigma = psf_sigma_px(opts.pulse.peak_frequency(), opts.psf_k, pixel_pitch);
  std::vector<double> band_sigma(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    band_sigma[b] = psf_sigma_px(bands.frequencies[b], opts.psf_k, pixel_pitch);
    if (std::max(band_sigma[b], tm_sigma) > static_cast<double>(std::min(h, w)) / 4.0) {
      throw ConfigError("degrade: PSF sigma " + std::to_string(std::max(band_sigma[b], tm_sigma)) +
                        " px exceeds a quarter of the image");
    }
  }
  std::vector<double> extra(nb, 1.0);
  for (const auto& [f, t] : opts.water_lines)
    for (std::size_t b = 0; b < nb; ++b)
      if (std::abs(bands.frequencies[b] - f) < 1e-9) extra[b] *= t;

  const TimeTrace ref = opts.pulse.reference();
  const double ref_peak = time_max(ref);
  const BandProjector proj(bands, ref.samples.size(), ref.dt);
  const auto ref_c = proj.apply(ref.samples);

  SpectralProjection out;
  out.view_angle = view_angle;
  out.bands = bands.frequencies;
  out.phase_range = {-kPi, kPi};
  out.time_max = Tensor({1, h, w});
  out.clean_gt = Tensor({1, h, w});
  std::vector<double> re(nb * n), im(nb * n);
  for (std::size_t i = 0; i < n; ++i) {
    const TimeTrace t = synth_trace(opts.pulse, maps.excess_path[i], maps.absorption[i]);
    out.time_max[i] = time_max(t) / ref_peak;
    const auto c = proj.apply(t.samples);
    for (std::size_t b = 0; b < nb; ++b) {
      // conj(C / C_ref): magnitude is the transmission, argument the phase lag.
      const std::complex<double> u = std::conj(c[b] / ref_c[b]) * extra[b];
      re[b * n + i] = u.real();
      im[b * n + i] = u.imag();
    }
    out.clean_gt[i] = maps.thickness[i] > 0.5 * pixel_pitch ? 0.0 : 1.0;
  }

  gaussian_blur(out.time_max.data(), h, w, tm_sigma);
  std::vector<double> bre(n), bim(n);
  for (std::size_t b = 0; b < nb; ++b) {
    std::copy_n(re.data() + b * n, n, bre.begin());
    std::copy_n(im.data() + b * n, n, bim.begin());
    blur_complex(bre, bim, h, w, band_sigma[b]);
    std::copy_n(bre.begin(), n, re.data() + b * n);
    std::copy_n(bim.begin(), n, im.data() + b * n);
  }

  if (std::isfinite(opts.snr_db)) {
    const double ratio = std::pow(10.0, opts.snr_db / 10.0);
    std::normal_distribution<double> unit(0.0, 1.0);
    const double s_tm = std::sqrt(mean_square(out.time_max.data(), n) / ratio);
    for (std::size_t i = 0; i < n; ++i) out.time_max[i] += s_tm * unit(rng);
    for (std::size_t b = 0; b < nb; ++b) {
      const double power = 0.5 * (mean_square(re.data() + b * n, n) + mean_square(im.data() + b * n, n));
      const double s = std::sqrt(power / ratio);
      for (std::size_t i = 0; i < n; ++i) {
        re[b * n + i] += s * unit(rng);
        im[b * n + i] += s * unit(rng);
      }
    }
  }

  for (double& v : out.time_max.values()) v = std::clamp(v, 0.0, 1.0);
  out.amplitude = Tensor({nb, h, w});
  out.phase = Tensor({nb, h, w});
  for (std::size_t j = 0; j < nb * n; ++j) {
    const std::complex<double> u(re[j], im[j]);
    out.amplitude[j] = std::clamp(std::abs(u), 0.0, 1.0);
    out.phase[j] = (wrap_phase(std::arg(u)) + kPi) / (2.0 * kPi);
  }
  return out;
}

SpectralProjection mirror(const SpectralProjection& p) {
  SpectralProjection m = p;
  flip_planes(m.time_max);
  flip_planes(m.amplitude);
  flip_planes(m.phase);
  flip_planes(m.clean_gt);
  m.view_angle = std::fmod(p.view_angle + 180.0, 360.0);
  return m;
}

std::vector<SpectralProjection> simulate_views(const Phantom& phantom, std::size_t count, double step_deg,
                                               const BandTable& bands, const DegradeOptions& opts, std::uint64_t seed) {
  if (count == 0) throw ConfigError("simulate: need at least one angle");
  if (!(step_deg > 0.0) || step_deg * static_cast<double>(count) > 180.0 + 1e-9) {
    throw ConfigError("simulate: angles must fit within 180 degrees before mirroring");
  }
  std::vector<SpectralProjection> views;
  for (std::size_t i = 0; i < count; ++i) {
    const double angle = step_deg * static_cast<double>(i);
    std::mt19937_64 rng(derive_seed(seed, i));
    views.push_back(degrade(path_integrals(phantom, angle), bands, opts, angle, phantom.voxel_pitch, rng));
  }
  for (std::size_t i = 0; i < count; ++i) views.push_back(mirror(views[i]));
  std::stable_sort(views.begin(), views.end(),
                   [](const SpectralProjection& a, const SpectralProjection& b) { return a.view_angle < b.view_angle; });
  return views;
}

AugmentParams draw_augment(const AugmentOptions& opts, std::size_t h, std::size_t w, std::uint64_t seed) {
  if (!(opts.scale_lo > 0.0 && opts.scale_lo <= opts.scale_hi)) throw ConfigError("augment: invalid scale range");
  std::mt19937_64 rng(seed);
  AugmentParams p;
  p.scale = std::uniform_real_distribution<double>(opts.scale_lo, opts.scale_hi)(rng);
  const std::size_t oh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h * p.scale)));
  const std::size_t ow = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w * p.scale)));
  p.top = oh > opts.crop ? std::uniform_int_distribution<std::size_t>(0, oh - opts.crop)(rng) : 0;
  p.left = ow > opts.crop ? std::uniform_int_distribution<std::size_t>(0, ow - opts.crop)(rng) : 0;
  p.flip = opts.allow_flip && std::bernoulli_distribution(0.5)(rng);
  p.brightness = std::uniform_real_distribution<double>(-opts.brightness, opts.brightness)(rng);
  p.contrast = 1.0 + std::uniform_real_distribution<double>(-opts.contrast, opts.contrast)(rng);
  return p;
}

SpectralProjection apply_augment(const SpectralProjection& in, const AugmentParams& a, std::size_t crop) {
  in.validate();
  if (crop == 0) throw ConfigError("augment: crop must be positive");
  if (!(a.scale > 0.0)) throw ConfigError("augment: scale must be positive");
  const std::size_t h = in.height(), w = in.width();
  const std::size_t oh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h * a.scale)));
  const std::size_t ow = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w * a.scale)));
  // Smaller than the crop: centre it and replicate the edges.
  const std::ptrdiff_t top = oh >= crop ? static_cast<std::ptrdiff_t>(std::min(a.top, oh - crop))
                                        : -static_cast<std::ptrdiff_t>((crop - oh) / 2);
  const std::ptrdiff_t left = ow >= crop ? static_cast<std::ptrdiff_t>(std::min(a.left, ow - crop))
                                         : -static_cast<std::ptrdiff_t>((crop - ow) / 2);
  auto geo = [&](const Tensor& t) { return rescale_crop(t, a.scale, oh, ow, top, left, crop, a.flip); };
  SpectralProjection out = in;
  out.time_max = geo(in.time_max);
  out.amplitude = geo(in.amplitude);
  out.phase = geo(in.phase);
  out.clean_gt = geo(in.clean_gt);
  for (double& v : out.clean_gt.values()) v = v >= 0.5 ? 1.0 : 0.0;
  const double offset = 0.5 * (1.0 - a.contrast) + a.brightness;
  for (Tensor* t : {&out.time_max, &out.amplitude})
    for (double& v : t->values()) v = std::clamp(v * a.contrast + offset, 0.0, 1.0);
  return out;
}

SpectralProjection augment(const SpectralProjection& p, const AugmentOptions& opts, std::uint64_t seed) {
  return apply_augment(p, draw_augment(opts, p.height(), p.width(), seed), opts.crop);
}

}  // namespace tzlab::sim
