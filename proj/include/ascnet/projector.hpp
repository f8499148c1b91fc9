#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ascnet/phantom.hpp"
#include "ascnet/volume.hpp"

namespace ascnet {

/// 2-D parallel-beam geometry. Angles are uniform over [0, pi); radial bins
/// span the FOV diagonal symmetrically about the FOV center.
struct Geometry {
  int n_angles = 48;
  int n_bins = 96;
  double step_mm = 2.0;
  double fov_mm = 256.0;

  double bin_mm() const;
  double angle(int a) const;
  void validate() const;
};

/// Geometry with the default half-pixel ray step for `grid`.
Geometry make_geometry(const Grid& grid, int n_angles = 48, int n_bins = 96);

enum class SinoKind { LineIntegral, Counts, Acf, Scatter };

std::string_view to_string(SinoKind k);
SinoKind sino_kind_from_string(std::string_view s);

struct Sinogram {
  int n_angles = 0;
  int n_bins = 0;
  SinoKind kind = SinoKind::LineIntegral;
  std::vector<float> data;

  Sinogram() = default;
  Sinogram(int a, int b, SinoKind k, float fill = 0.0f)
      : n_angles(a), n_bins(b), kind(k), data(static_cast<std::size_t>(a) * b, fill) {}

  float& at(int a, int b) { return data[static_cast<std::size_t>(a) * n_bins + b]; }
  float at(int a, int b) const { return data[static_cast<std::size_t>(a) * n_bins + b]; }
  std::span<float> row(int a) { return {data.data() + static_cast<std::size_t>(a) * n_bins, static_cast<std::size_t>(n_bins)}; }
  std::span<const float> row(int a) const { return {data.data() + static_cast<std::size_t>(a) * n_bins, static_cast<std::size_t>(n_bins)}; }
  double sum() const;
};

struct ScatterConfig {
  double scatter_fraction = 0.3;
  double kernel_sigma_bins = 6.0;

  void validate() const;
};

/// Line integrals sum(image(sample)) * step_mm with bilinear sampling.
Sinogram forward_project(const Image2D& image, const Geometry& geom);

/// Forward projection restricted to the listed angle rows; other rows stay 0.
Sinogram forward_project(const Image2D& image, const Geometry& geom, std::span<const int> angles);

/// Exact transpose of forward_project under the same sampling weights.
Image2D back_project(const Sinogram& sino, const Geometry& geom, int height, int width);
Image2D back_project(const Sinogram& sino, const Geometry& geom, int height, int width,
                     std::span<const int> angles);

/// exp(-integral(mu)) with mu in 1/cm and path length in mm.
Sinogram attenuation_factors(const Image2D& mu, const Geometry& geom);

/// Radial Gaussian blur of each angle row, rescaled to total SF/(1-SF) of the input mass.
Sinogram scatter_estimate(const Sinogram& trues_att, const ScatterConfig& cfg);

/// Normalized truncated Gaussian taps (radius ceil(4 sigma)), index 0 = -radius.
std::vector<double> gaussian_taps(double sigma);

/// Poisson draw per bin with expectation `expected`; one engine per bin.
Sinogram poisson_sample(const Sinogram& expected, std::uint64_t seed);

/// Scales `sino` to sum to `total_counts`, then draws Poisson counts.
Sinogram add_poisson(const Sinogram& sino, double total_counts, std::uint64_t seed);

}  // namespace ascnet
