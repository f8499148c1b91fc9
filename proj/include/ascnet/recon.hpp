#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <utility>

#include "ascnet/phantom.hpp"
#include "ascnet/projector.hpp"
#include "ascnet/volume.hpp"

namespace ascnet {

enum class ReconMode { NC, ASC };

struct ReconConfig {
  int iterations = 4;
  int subsets = 8;
  ReconMode mode = ReconMode::ASC;
  double post_filter_fwhm_mm = 4.0;
  double epsilon = 1e-8;
  double initial_value = 1.0;

  void validate(const Geometry& geom) const;
};

/// Called after each full iteration with the unfiltered estimate.
using OsemObserver = std::function<void(int iteration, const Image2D& estimate)>;

/// Ordered-subsets EM with angle-interleaved subsets. In NC mode the model
/// uses unit attenuation and no scatter; the data are used unchanged.
Image2D osem(const Sinogram& prompts, const Sinogram& acf, const Sinogram& scatter,
             const Geometry& geom, const ReconConfig& cfg, int height, int width,
             const OsemObserver& observer = {});

/// Separable Gaussian, truncated at 4 sigma and renormalized over in-image taps.
Image2D gaussian_filter(const Image2D& image, double fwhm_mm, double pixel_y_mm, double pixel_x_mm);

struct SimulationConfig {
  Grid grid;
  int n_slices = 16;
  int n_angles = 48;
  int n_bins = 96;
  ReconConfig recon;
  ScatterConfig scatter;
  double counts = 2.0e6;  // expected prompts per slice for a 300 s scan
  bool with_couch = true;
  bool noiseless = false;
};

struct SubjectImages {
  ImageVolume pet_nc;   // kBq/mL scale
  ImageVolume pet_asc;  // kBq/mL
};

/// Full sinogram-space pipeline for one phantom: NC and ASC reconstructions
/// of the same prompts.
SubjectImages simulate_subject(const Phantom& phantom, const SimulationConfig& cfg,
                               std::uint64_t seed);

}  // namespace ascnet
