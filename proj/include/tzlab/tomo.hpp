#pragma once

// Parallel-beam tomography.
//
// Geometry (one slice, N x N pixels, pixel pitch p):
//
//          y ^            detector axis u = ( cos t,  sin t)
//            |   . ray    ray direction v = (-sin t,  cos t)
//            |  /
//     -------+-------> x  image coordinates: x = col - (N-1)/2,
//            |                                y = (N-1)/2 - row
//
// Angles are in degrees, counterclockwise from +x. Detector bin d sits at
// u-coordinate d - (D-1)/2, with bin spacing equal to the pixel pitch. At
// 0 degrees bin d - (D-N)/2 integrates image column d - (D-N)/2 top to
// bottom. A view at angle a + 180 is the mirror image of the view at a.
//
// Forward projection samples each ray at unit steps with bilinear
// interpolation (zero outside the slice); back-projection in FBP uses linear
// interpolation along the detector.

#include <span>
#include <vector>

#include "tzlab/tensor.hpp"

namespace tzlab::tomo {

struct Sinogram {
  Tensor data;                     // [A, D]
  std::vector<double> angles_deg;  // strictly increasing, within [0, 360)
  double pixel_pitch = 1.0;        // mm per detector bin / pixel
  std::size_t image_size = 0;      // N of the slice the sinogram describes

  std::size_t angle_count() const { return data.dim(0); }
  std::size_t detector_count() const { return data.dim(1); }
  /// Throws ShapeError when an invariant is violated.
  void validate() const;
};

struct Volume {
  Tensor grid;  // [Z, N, N]
  double voxel_pitch = 1.0;
};

/// Detector count covering the slice diagonal with the same parity as n, so
/// that 0-degree samples fall on pixel centres.
std::size_t diagonal_detector_count(std::size_t n);

/// `count` angles starting at 0 with the given step, in degrees.
std::vector<double> uniform_angles(std::size_t count, double step_deg);

/// Line integrals of a square slice [N,N]. detector_count 0 selects
/// diagonal_detector_count(N). Values are scaled by pixel_pitch.
Sinogram radon(const Tensor& slice, std::span<const double> angles_deg, std::size_t detector_count = 0,
               double pixel_pitch = 1.0);

/// Projection of one slice at one angle into `row` (length D).
void project_angle(const Tensor& slice, double angle_deg, std::span<double> row, double pixel_pitch = 1.0);

/// Exact adjoint of project_angle: accumulates the transpose applied to
/// `row` into `image` [N,N].
void project_angle_adjoint(std::span<const double> row, double angle_deg, Tensor& image, double pixel_pitch = 1.0);

enum class RampWindow { None, Hann };

/// Length of the zero-padded filtering buffer: the next power of two >= 2D.
std::size_t ramp_padded_length(std::size_t detector_count);

/// Frequency response of the Ram-Lak ramp on the padded grid: the DFT of
/// the discrete spatial kernel h[0] = 1/4, h[odd n] = -1/(pi n)^2,
/// h[even n] = 0, with the DC bin set to zero.
std::vector<double> ramp_response(std::size_t padded_length, RampWindow window);

Sinogram ramp_filter(const Sinogram& sino, RampWindow window = RampWindow::None);

/// Filtered back-projection onto an image_size x image_size grid.
Tensor fbp(const Sinogram& sino, RampWindow window = RampWindow::None);

struct SartOptions {
  std::size_t iters = 10;
  double relax = 0.25;
};

/// SART from a zero start, sweeping angles in ascending order. Negative
/// values are clamped to zero after every full sweep. When `residuals` is
/// given it receives ||A x_k - b|| after each iteration k.
Tensor sart(const Sinogram& sino, const SartOptions& opts = {}, std::vector<double>* residuals = nullptr);

enum class ReconMethod { Fbp, Sart };

struct VolumeOptions {
  ReconMethod method = ReconMethod::Fbp;
  RampWindow window = RampWindow::None;
  SartOptions sart;
  double pixel_pitch = 1.0;
};

/// Stacks one horizontal slice per image row. Every view is [1,H,W] (or
/// [H,W]); row r of every view forms the sinogram of slice r. Views are
/// taken in ascending angle order, so permuting views together with their
/// angles does not change the result.
Volume reconstruct_volume(std::span<const Tensor> views, std::span<const double> angles_deg,
                          const VolumeOptions& opts = {});

}  // namespace tzlab::tomo
