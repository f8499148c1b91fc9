#include "ascnet/recon.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "ascnet/errors.hpp"
#include "ascnet/parallel.hpp"
#include "ascnet/rng.hpp"

namespace ascnet {

void ReconConfig::validate(const Geometry& geom) const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (subsets < 1 || geom.n_angles % subsets != 0) {
    throw ConfigError("subsets (" + std::to_string(subsets) + ") must divide n_angles (" +
                      std::to_string(geom.n_angles) + ")");
  }
  if (!(post_filter_fwhm_mm >= 0.0)) throw ConfigError("post-filter FWHM must be >= 0");
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw ConfigError("epsilon must lie in (0, 1e-3]");
  if (!(initial_value > 0.0)) throw ConfigError("initial value must be positive");
}

Image2D osem(const Sinogram& prompts, const Sinogram& acf, const Sinogram& scatter,
             const Geometry& geom, const ReconConfig& cfg, int height, int width,
             const OsemObserver& observer) {
  cfg.validate(geom);
  auto check = [&](const Sinogram& s, const char* what) {
    if (s.n_angles != geom.n_angles || s.n_bins != geom.n_bins) {
      throw ShapeError(std::string(what) + " sinogram does not match geometry");
    }
  };
  check(prompts, "prompts");
  const bool asc = cfg.mode == ReconMode::ASC;
  if (asc) {
    check(acf, "acf");
    check(scatter, "scatter");
  }
  for (float v : prompts.data) {
    if (!(v >= 0.0f)) throw DomainError("prompts must be nonnegative");
  }

  std::vector<std::vector<int>> subset_angles(cfg.subsets);
  for (int a = 0; a < geom.n_angles; ++a) subset_angles[a % cfg.subsets].push_back(a);

  const double eps = cfg.epsilon;
  std::vector<Image2D> sensitivity;
  sensitivity.reserve(cfg.subsets);
  for (const auto& angles : subset_angles) {
    Sinogram weights(geom.n_angles, geom.n_bins, SinoKind::Acf, 0.0f);
    for (int a : angles) {
      for (int b = 0; b < geom.n_bins; ++b) weights.at(a, b) = asc ? acf.at(a, b) : 1.0f;
    }
    sensitivity.push_back(back_project(weights, geom, height, width, angles));
  }

  Image2D x(height, width, static_cast<float>(cfg.initial_value));
  for (int it = 0; it < cfg.iterations; ++it) {
    for (int k = 0; k < cfg.subsets; ++k) {
      const auto& angles = subset_angles[k];
      const Sinogram proj = forward_project(x, geom, angles);
      Sinogram ratio(geom.n_angles, geom.n_bins, SinoKind::Counts, 0.0f);
      for (int a : angles) {
        for (int b = 0; b < geom.n_bins; ++b) {
          const double att = asc ? acf.at(a, b) : 1.0;
          const double add = asc ? scatter.at(a, b) : 0.0;
          const double expected = att * proj.at(a, b) + add + eps;
          ratio.at(a, b) = static_cast<float>(att * prompts.at(a, b) / expected);
        }
      }
      const Image2D update = back_project(ratio, geom, height, width, angles);
      const Image2D& sens = sensitivity[k];
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double v = static_cast<double>(x.data[i]) / (sens.data[i] + eps) * update.data[i];
        x.data[i] = static_cast<float>(v > 0.0 ? v : 0.0);
      }
    }
    if (observer) observer(it + 1, x);
  }
  if (cfg.post_filter_fwhm_mm > 0.0) {
    x = gaussian_filter(x, cfg.post_filter_fwhm_mm, geom.fov_mm / height, geom.fov_mm / width);
  }
  return x;
}

namespace {

std::vector<double> fwhm_taps(double fwhm_mm, double pixel_mm) {
  const double sigma = fwhm_mm / (2.0 * std::sqrt(2.0 * std::log(2.0))) / pixel_mm;
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  return taps;
}

}  // namespace

Image2D gaussian_filter(const Image2D& image, double fwhm_mm, double pixel_y_mm, double pixel_x_mm) {
  if (!(fwhm_mm >= 0.0)) throw DomainError("FWHM must be >= 0");
  if (fwhm_mm == 0.0) return image;
  const int h = image.height;
  const int w = image.width;
  const auto tx = fwhm_taps(fwhm_mm, pixel_x_mm);
  const auto ty = fwhm_taps(fwhm_mm, pixel_y_mm);
  const int rx = static_cast<int>(tx.size() / 2);
  const int ry = static_cast<int>(ty.size() / 2);

  std::vector<double> tmp(image.data.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      double norm = 0.0;
      for (int k = -rx; k <= rx; ++k) {
        const int cc = c + k;
        if (cc < 0 || cc >= w) continue;
        acc += tx[k + rx] * image.at(r, cc);
        norm += tx[k + rx];
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc / norm;
    }
  }
  Image2D out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      double norm = 0.0;
      for (int k = -ry; k <= ry; ++k) {
        const int rr = r + k;
        if (rr < 0 || rr >= h) continue;
        acc += ty[k + ry] * tmp[static_cast<std::size_t>(rr) * w + c];
        norm += ty[k + ry];
      }
      out.at(r, c) = static_cast<float>(acc / norm);
    }
  }
  return out;
}

SubjectImages simulate_subject(const Phantom& phantom, const SimulationConfig& cfg,
                               std::uint64_t seed) {
  const Geometry geom = make_geometry(cfg.grid, cfg.n_angles, cfg.n_bins);
  cfg.recon.validate(geom);
  cfg.scatter.validate();
  if (!(cfg.counts > 0.0)) throw DomainError("counts must be positive");

  const RasterizedPhantom scene = rasterize(phantom, cfg.grid, cfg.n_slices, cfg.with_couch);
  const int h = cfg.grid.height;
  const int w = cfg.grid.width;
  SubjectImages out{ImageVolume(cfg.n_slices, h, w, scene.activity.voxel_size_mm, Units::kBqPerMl),
                    ImageVolume(cfg.n_slices, h, w, scene.activity.voxel_size_mm, Units::kBqPerMl)};
  const double total_counts = cfg.counts * phantom.meta.duration_s / 300.0;

  parallel_for(cfg.n_slices, [&](int s) {
    const Image2D activity = scene.activity.slice_image(s);
    const Image2D mu = scene.mu.slice_image(s);
    const Sinogram acf = attenuation_factors(mu, geom);
    Sinogram trues = forward_project(activity, geom);
    for (std::size_t i = 0; i < trues.data.size(); ++i) trues.data[i] *= acf.data[i];
    trues.kind = SinoKind::Counts;
    Sinogram scatter = scatter_estimate(trues, cfg.scatter);

    const double mass = trues.sum() + scatter.sum();
    const double scale = mass > 0.0 ? total_counts / mass : 1.0;
    Sinogram expected(geom.n_angles, geom.n_bins, SinoKind::Counts);
    for (std::size_t i = 0; i < expected.data.size(); ++i) {
      expected.data[i] = static_cast<float>(scale * (static_cast<double>(trues.data[i]) + scatter.data[i]));
      scatter.data[i] = static_cast<float>(scale * scatter.data[i]);
    }
    const Sinogram prompts =
        cfg.noiseless ? expected : poisson_sample(expected, derive_seed(seed, {static_cast<std::uint64_t>(s)}));

    ReconConfig rc = cfg.recon;
    rc.mode = ReconMode::ASC;
    Image2D asc = osem(prompts, acf, scatter, geom, rc, h, w);
    rc.mode = ReconMode::NC;
    Image2D nc = osem(prompts, acf, scatter, geom, rc, h, w);
    const float inv = static_cast<float>(1.0 / scale);
    for (float& v : asc.data) v *= inv;
    for (float& v : nc.data) v *= inv;
    out.pet_asc.set_slice(s, asc);
    out.pet_nc.set_slice(s, nc);
  });
  return out;
}

}  // namespace ascnet
