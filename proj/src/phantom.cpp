#include "ascnet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ascnet/errors.hpp"
#include "ascnet/rng.hpp"

namespace ascnet {

bool Ellipse::contains(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = (c * dx + s * dy) / ax;
  const double v = (-s * dx + c * dy) / ay;
  return u * u + v * v <= 1.0;
}

std::string_view to_string(Preset p) {
  return p == Preset::Brain ? "brain" : "abdomen";
}

Preset preset_from_string(std::string_view s) {
  if (s == "brain") return Preset::Brain;
  if (s == "abdomen") return Preset::Abdomen;
  throw DomainError("unknown preset '" + std::string(s) + "'");
}

namespace {

// Draws u ~ U(0,1) and returns base * (1 + spread * variability * (2u - 1)).
struct Sampler {
  SplitMix64 gen;
  double variability;

  double u() { return uniform01(gen); }
  double around(double base, double spread) {
    return base * (1.0 + spread * variability * (2.0 * u() - 1.0));
  }
  double offset(double spread) { return spread * variability * (2.0 * u() - 1.0); }
};

// Places an ellipse inside a host ellipse. `radius_norm` and `extent_frac`
// are in the host's normalized frame; radius_norm + extent_frac < 1 keeps
// the child (and its jitter) inside the host.
Ellipse place_inside(const Ellipse& host, double radius_norm, double phi, double extent_frac,
                     double aspect, double own_angle) {
  const double c = std::cos(host.angle);
  const double s = std::sin(host.angle);
  const double lx = host.ax * radius_norm * std::cos(phi);
  const double ly = host.ay * radius_norm * std::sin(phi);
  Ellipse e;
  e.cx = host.cx + c * lx - s * ly;
  e.cy = host.cy + s * lx + c * ly;
  const double r = extent_frac * std::min(host.ax, host.ay);
  e.ax = r;
  e.ay = r * aspect;
  e.angle = host.angle + own_angle;
  return e;
}

SubjectMeta sample_meta(std::uint64_t seed) {
  SplitMix64 g(derive_seed(seed, {0x6d657461}));
  SubjectMeta m;
  m.dose_MBq = 200.0 + 300.0 * uniform01(g);
  m.weight_g = 50000.0 + 50000.0 * uniform01(g);
  m.duration_s = 135.0 + (900.0 - 135.0) * uniform01(g);
  m.seed = seed;
  return m;
}

Phantom brain(Sampler& rnd, const AttenuationTable& t) {
  Phantom p;
  Ellipse skull;
  skull.cx = rnd.offset(0.03);
  skull.cy = -0.06 + rnd.offset(0.02);
  skull.ax = rnd.around(0.62, 0.10);
  skull.ay = rnd.around(0.72, 0.10);
  skull.angle = rnd.offset(0.15);
  skull.activity = 1.0;
  skull.mu = t.bone;
  skull.compose = Compose::Replace;

  Ellipse tissue = skull;
  const double thickness = rnd.around(0.06, 0.2);
  tissue.ax -= thickness;
  tissue.ay -= thickness;
  tissue.activity = rnd.around(8.0, 0.25);
  tissue.mu = t.soft_tissue;

  Ellipse white = place_inside(tissue, rnd.offset(0.1), 0.0, 1.0, 1.0, 0.0);
  white.ax = tissue.ax * rnd.around(0.55, 0.15);
  white.ay = tissue.ay * rnd.around(0.55, 0.15);
  white.activity = tissue.activity * rnd.around(0.5, 0.3);
  white.mu = t.soft_tissue;
  white.compose = Compose::Replace;

  p.ellipses = {skull, tissue, white};

  const double count_u = rnd.u();
  const int n_hot =
      std::clamp(static_cast<int>(std::lround(2.0 + rnd.variability * (3.0 * count_u - 1.5))), 1, 3);
  for (int k = 0; k < 3; ++k) {
    // Always draw so the stream layout is independent of n_hot.
    const double phi = 2.0 * std::numbers::pi * (k / 3.0) + rnd.offset(0.8);
    const double radius = 0.45 + rnd.offset(0.1);
    const double extent = rnd.around(0.18, 0.3);
    const double aspect = rnd.around(1.4, 0.3);
    const double activity = rnd.around(14.0, 0.4);
    if (k >= n_hot) continue;
    Ellipse hot = place_inside(tissue, radius, phi, extent, aspect, phi);
    hot.activity = activity;
    hot.mu = 0.0;
    hot.compose = Compose::Add;
    p.ellipses.push_back(hot);
  }

  const bool has_lesion = rnd.u() >= 0.5 * rnd.variability;
  const double lphi = 2.0 * std::numbers::pi * rnd.u() * rnd.variability + 0.7;
  const double lrad = 0.35 + rnd.offset(0.2);
  const double lext = rnd.around(0.09, 0.3);
  const double lact = rnd.around(30.0, 0.3);
  if (has_lesion) {
    Ellipse lesion = place_inside(tissue, lrad, lphi, lext, 1.0, 0.0);
    lesion.activity = lact;
    lesion.mu = 0.0;
    lesion.compose = Compose::Add;
    lesion.jitter = true;
    p.ellipses.push_back(lesion);
  }

  p.couch = Couch{-0.85, 0.85, 0.80, 0.88, t.couch};
  return p;
}

Phantom abdomen(Sampler& rnd, const AttenuationTable& t) {
  Phantom p;
  Ellipse body;
  body.cx = rnd.offset(0.05);
  body.cy = -0.08 + rnd.offset(0.04);
  body.ax = rnd.around(0.78, 0.2);
  body.ay = rnd.around(0.55, 0.25);
  body.angle = rnd.offset(0.2);
  body.activity = rnd.around(4.0, 0.3);
  body.mu = t.soft_tissue;
  body.compose = Compose::Replace;
  p.ellipses.push_back(body);

  Ellipse spine = place_inside(body, 0.6, std::numbers::pi / 2, 0.2, 1.0, 0.0);
  spine.activity = 2.0;
  spine.mu = t.bone;
  spine.compose = Compose::Replace;
  p.ellipses.push_back(spine);

  Ellipse liver = place_inside(body, 0.45 + rnd.offset(0.05), std::numbers::pi + rnd.offset(0.4),
                               rnd.around(0.24, 0.05), rnd.around(1.3, 0.3), rnd.offset(0.5));
  liver.activity = rnd.around(4.0, 0.4);
  liver.mu = 0.0;
  liver.compose = Compose::Add;
  p.ellipses.push_back(liver);

  Ellipse pancreas = place_inside(body, 0.2 + rnd.offset(0.1), rnd.offset(1.0),
                                  rnd.around(0.2, 0.2), rnd.around(0.5, 0.3), rnd.offset(0.6));
  pancreas.activity = rnd.around(6.0, 0.4);
  pancreas.mu = 0.0;
  pancreas.compose = Compose::Add;
  p.ellipses.push_back(pancreas);

  const bool has_lesion = rnd.u() >= 0.5 * rnd.variability;
  const double lphi = rnd.offset(3.0);
  const double lrad = 0.3 + rnd.offset(0.15);
  const double lext = rnd.around(0.1, 0.3);
  const double lact = rnd.around(18.0, 0.4);
  if (has_lesion) {
    Ellipse lesion = place_inside(body, lrad, lphi, lext, 1.0, 0.0);
    lesion.activity = lact;
    lesion.mu = 0.0;
    lesion.compose = Compose::Add;
    lesion.jitter = true;
    p.ellipses.push_back(lesion);
  }

  p.couch = Couch{-0.9, 0.9, 0.80, 0.88, t.couch};
  return p;
}

}  // namespace

Phantom make_phantom(Preset preset, std::uint64_t seed, double variability,
                     const AttenuationTable& table) {
  if (!(variability >= 0.0 && variability <= 1.0)) {
    throw DomainError("variability must lie in [0, 1]");
  }
  Sampler rnd{SplitMix64(derive_seed(seed, {static_cast<std::uint64_t>(preset) + 1})),
              variability};
  Phantom p = preset == Preset::Brain ? brain(rnd, table) : abdomen(rnd, table);
  p.meta = sample_meta(seed);
  return p;
}

RasterizedPhantom rasterize(const Phantom& phantom, const Grid& grid, int n_slices,
                            bool with_couch) {
  if (grid.height < 8 || grid.width < 8) throw DomainError("grid must be at least 8x8");
  if (!(grid.fov_mm > 0.0)) throw DomainError("fov_mm must be positive");
  if (n_slices < 1) throw DomainError("n_slices must be >= 1");

  const double px = grid.pixel_mm();
  const VoxelSize vs{px, grid.fov_mm / grid.height, px};
  RasterizedPhantom out{ImageVolume(n_slices, grid.height, grid.width, vs, Units::kBqPerMl),
                        ImageVolume(n_slices, grid.height, grid.width, vs, Units::PerCm)};

  for (int s = 0; s < n_slices; ++s) {
    std::vector<Ellipse> scene = phantom.ellipses;
    for (std::size_t k = 0; k < scene.size(); ++k) {
      if (!scene[k].jitter) continue;
      SplitMix64 g(derive_seed(phantom.meta.seed, {0x6a6974, static_cast<std::uint64_t>(s), k}));
      scene[k].cx += kSliceJitter * (2.0 * uniform01(g) - 1.0);
      scene[k].cy += kSliceJitter * (2.0 * uniform01(g) - 1.0);
    }
    auto act = out.activity.slice(s);
    auto mu = out.mu.slice(s);
    for (int r = 0; r < grid.height; ++r) {
      const double y = (r + 0.5) / grid.height * 2.0 - 1.0;
      for (int c = 0; c < grid.width; ++c) {
        const double x = (c + 0.5) / grid.width * 2.0 - 1.0;
        double a = 0.0;
        double m = 0.0;
        for (const Ellipse& e : scene) {
          if (!e.contains(x, y)) continue;
          if (e.compose == Compose::Replace) {
            a = e.activity;
            m = e.mu;
          } else {
            a += e.activity;
            m += e.mu;
          }
        }
        if (with_couch && phantom.couch && phantom.couch->contains(x, y)) {
          m += phantom.couch->mu;
        }
        const std::size_t idx = static_cast<std::size_t>(r) * grid.width + c;
        act[idx] = static_cast<float>(a);
        mu[idx] = static_cast<float>(m);
      }
    }
  }
  return out;
}

}  // namespace ascnet
