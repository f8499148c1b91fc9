#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "ascnet/volume.hpp"

namespace ascnet {

/// Default 511 keV attenuation coefficients in 1/cm. Overridable in tests.
struct AttenuationTable {
  double soft_tissue = 0.096;
  double bone = 0.17;
  double couch = 0.12;
};

enum class Compose { Add, Replace };

/// Ellipse in field-of-view fractions: [-1, 1] spans the full FOV on each axis.
struct Ellipse {
  double cx = 0.0;
  double cy = 0.0;
  double ax = 0.5;
  double ay = 0.5;
  double angle = 0.0;     // radians
  double activity = 0.0;  // kBq/mL
  double mu = 0.0;        // 1/cm
  Compose compose = Compose::Add;
  bool jitter = false;    // lesion-like: position perturbed per slice

  bool contains(double x, double y) const;
};

/// Patient table. Contributes to the attenuation map only.
struct Couch {
  double x0 = -0.9, x1 = 0.9;
  double y0 = 0.8, y1 = 0.9;
  double mu = 0.12;

  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct SubjectMeta {
  double dose_MBq = 370.0;
  double weight_g = 70000.0;
  double duration_s = 300.0;
  std::uint64_t seed = 0;
};

enum class Preset { Brain, Abdomen };

std::string_view to_string(Preset p);
Preset preset_from_string(std::string_view s);

struct Phantom {
  std::vector<Ellipse> ellipses;
  std::optional<Couch> couch;
  SubjectMeta meta;
};

struct Grid {
  int height = 64;
  int width = 64;
  double fov_mm = 256.0;

  double pixel_mm() const { return fov_mm / width; }
};

/// Builds a randomized phantom; identical (preset, seed, variability) give
/// identical phantoms. With variability 0 the geometry ignores the seed.
Phantom make_phantom(Preset preset, std::uint64_t seed, double variability,
                     const AttenuationTable& table = {});

struct RasterizedPhantom {
  ImageVolume activity;  // kBq/mL
  ImageVolume mu;        // 1/cm
};

RasterizedPhantom rasterize(const Phantom& phantom, const Grid& grid, int n_slices,
                            bool with_couch);

/// Per-slice jitter amplitude in FOV-fraction units (2% of the FOV).
inline constexpr double kSliceJitter = 0.04;

}  // namespace ascnet
