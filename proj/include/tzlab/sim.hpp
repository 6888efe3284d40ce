#pragma once

// Synthetic THz time-domain measurements of voxel phantoms.
//
// Units: length mm, time ps, frequency THz. Objects rotate about the
// vertical axis; every horizontal phantom slice z becomes image row z of a
// view, projected with the tomography ray model.

#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tzlab/tensor.hpp"

namespace tzlab::sim {

inline constexpr double kSpeedOfLight = 0.299792458;  // mm/ps
inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

struct Material {
  std::string name;
  double n = 1.0;      // refractive index, [1,4]
  double alpha = 0.0;  // field absorption, 1/mm, [0,10]
  void validate() const;
};

/// High impact polystyrene.
Material hips();
/// A denser, more absorbing filler used for inclusions.
Material filled_resin();

/// Labelled voxel grid [depth][size][size] (z, row, col). Label 0 is vacuum;
/// label i > 0 refers to materials[i-1].
struct Phantom {
  std::size_t depth = 0;
  std::size_t size = 0;
  double voxel_pitch = 0.25;
  std::vector<std::uint8_t> labels;
  std::vector<Material> materials;

  std::uint8_t label(std::size_t z, std::size_t r, std::size_t c) const { return labels[(z * size + r) * size + c]; }
  void validate() const;
};

enum class PhantomKind { Disk, Bars, BlobComposite, Procedural };

PhantomKind parse_phantom_kind(const std::string& s);
std::string to_string(PhantomKind k);

struct PhantomSpec {
  PhantomKind kind = PhantomKind::Disk;
  std::size_t size = 32;
  std::size_t depth = 32;
  double voxel_pitch = 0.25;
  std::vector<Material> materials{hips()};
  std::uint64_t seed = 0;
  /// Disk kind: cylinder radius as a fraction of size. The other kinds draw
  /// their geometry from the seed.
  double radius_frac = 0.3;
};

/// Every kind keeps material inside the cylinder inscribed in the grid, so
/// views of width `size` never clip. An empty material list yields vacuum.
Phantom make_phantom(const PhantomSpec& spec);

struct PathMaps {
  Tensor thickness;    // [H,W] mm of material along each ray
  Tensor excess_path;  // [H,W] integral of (n - 1) dl, mm
  Tensor absorption;   // [H,W] integral of alpha dl
};

/// Line integrals through every horizontal slice at one view angle, using
/// tomo::project_angle with one detector bin per column.
PathMaps path_integrals(const Phantom& phantom, double angle_deg);

struct TimeTrace {
  std::vector<double> samples;
  double dt = 0.1;
};

/// Differentiated-Gaussian reference pulse, peak value 1.
struct PulseModel {
  double dt = 0.1;
  std::size_t samples = 1024;
  double sigma = 0.3;
  double t0 = 10.0;

  /// Frequency where the pulse spectrum peaks, 1/(2 pi sigma).
  double peak_frequency() const;
  double value(double t) const;
  TimeTrace reference() const;
};

/// Reference delayed by excess_path / c and scaled by exp(-absorption). When
/// snr_db is finite, white noise of standard deviation 10^(-snr/20) (relative
/// to the unit pulse peak) is added from `rng`.
TimeTrace synth_trace(const PulseModel& pulse, double excess_path_mm, double absorption, double snr_db = kNoNoise,
                      std::mt19937_64* rng = nullptr);

/// Largest |E(t)| over the samples.
double time_max(const TimeTrace& trace);

struct BandTable {
  std::vector<double> frequencies;  // THz, ascending
  void validate() const;
  static BandTable standard();
};

/// sum_k E(t_k) exp(-i 2 pi f t_k) dt for every band.
std::vector<std::complex<double>> band_coefficients(const TimeTrace& trace, const BandTable& bands);

struct BandFeatures {
  std::vector<double> amplitude;  // |C| / |C_ref|
  std::vector<double> phase;      // phase lag behind the reference, wrapped to (-pi, pi]
};

/// Amplitude and phase of the trace relative to the reference. With
/// `unwrap`, phases are unwrapped against the delay estimated from the
/// positive pulse lobe.
BandFeatures extract_bands(const TimeTrace& trace, const TimeTrace& reference, const BandTable& bands,
                           bool unwrap = false);

/// Wraps to (-pi, pi].
double wrap_phase(double phi);

/// Gaussian PSF width in pixels for a band: k * (c / f) / pitch.
double psf_sigma_px(double f_thz, double k, double pixel_pitch);

/// Separable Gaussian blur with replicated edges, kernel radius ceil(3 sigma).
/// sigma 0 leaves the plane untouched.
void gaussian_blur(double* plane, std::size_t h, std::size_t w, double sigma);

struct DegradeOptions {
  double psf_k = 0.5;
  double snr_db = 20.0;  // kNoNoise disables noise
  /// (frequency, extra field transmission) pairs applied to matching bands.
  std::vector<std::pair<double, double>> water_lines;
  PulseModel pulse;
};

struct ChannelRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// One view. Every channel is normalised to [0,1] with a fixed physical
/// range: time-max by the reference peak, amplitude as transmission, phase
/// as (phi + pi) / (2 pi).
struct SpectralProjection {
  Tensor time_max;   // [1,H,W]
  Tensor amplitude;  // [B,H,W]
  Tensor phase;      // [B,H,W]
  Tensor clean_gt;   // [1,H,W] silhouette: 0 on the object, 1 where the beam passes freely
  double view_angle = 0.0;
  std::vector<double> bands;
  ChannelRange time_max_range{0.0, 1.0};
  ChannelRange amplitude_range{0.0, 1.0};
  ChannelRange phase_range;  // set to (-pi, pi]

  std::size_t height() const { return time_max.dim(1); }
  std::size_t width() const { return time_max.dim(2); }
  void validate() const;
};

/// Per-pixel synth_trace -> time_max / extract_bands, then per-band blur of
/// the complex field (time-max at the pulse peak frequency), then image
/// noise at opts.snr_db per channel. The ground truth is the object's
/// shadow: 0 where more than half a pixel of material lies on the ray, 1
/// elsewhere, matching the polarity of the transmission images.
SpectralProjection degrade(const PathMaps& maps, const BandTable& bands, const DegradeOptions& opts, double view_angle,
                           double pixel_pitch, std::mt19937_64& rng);

/// Horizontal mirror; the angle moves by 180 degrees.
SpectralProjection mirror(const SpectralProjection& p);

/// `count` views at `step_deg` spacing from 0 plus their mirrors, 2*count
/// views sorted by angle. View i draws noise from a stream seeded by
/// (seed, i).
std::vector<SpectralProjection> simulate_views(const Phantom& phantom, std::size_t count, double step_deg,
                                               const BandTable& bands, const DegradeOptions& opts, std::uint64_t seed);

struct AugmentOptions {
  std::size_t crop = 128;
  double scale_lo = 0.5;
  double scale_hi = 1.5;
  bool allow_flip = true;
  double brightness = 0.1;  // max |offset|
  double contrast = 0.1;    // max |gain - 1|
};

struct AugmentParams {
  double scale = 1.0;
  std::size_t top = 0;
  std::size_t left = 0;
  bool flip = false;
  double brightness = 0.0;
  double contrast = 1.0;
};

AugmentParams draw_augment(const AugmentOptions& opts, std::size_t h, std::size_t w, std::uint64_t seed);

/// Rescales (bilinear), pads with replicated edges when smaller than the
/// crop, crops, optionally mirrors. The geometric part acts on every channel
/// and on the silhouette (re-binarised at 0.5); brightness/contrast act on
/// time-max and amplitude only.
SpectralProjection apply_augment(const SpectralProjection& p, const AugmentParams& params, std::size_t crop);

SpectralProjection augment(const SpectralProjection& p, const AugmentOptions& opts, std::uint64_t seed);

/// Seed for an independent stream derived from (master, a, b).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace tzlab::sim
