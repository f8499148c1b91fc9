#include "ascnet/projector.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "ascnet/errors.hpp"
#include "ascnet/rng.hpp"

namespace ascnet {

double Geometry::bin_mm() const { return fov_mm * std::numbers::sqrt2 / n_bins; }

double Geometry::angle(int a) const { return std::numbers::pi * a / n_angles; }

void Geometry::validate() const {
  if (n_angles < 4) throw DomainError("geometry needs at least 4 angles");
  if (n_bins < 8) throw DomainError("geometry needs at least 8 radial bins");
  if (!(step_mm > 0.0)) throw DomainError("ray step must be positive");
  if (!(fov_mm > 0.0)) throw DomainError("fov must be positive");
}

Geometry make_geometry(const Grid& grid, int n_angles, int n_bins) {
  Geometry g;
  g.n_angles = n_angles;
  g.n_bins = n_bins;
  g.fov_mm = grid.fov_mm;
  g.step_mm = 0.5 * grid.pixel_mm();
  g.validate();
  return g;
}

std::string_view to_string(SinoKind k) {
  switch (k) {
    case SinoKind::LineIntegral: return "line_integral";
    case SinoKind::Counts: return "counts";
    case SinoKind::Acf: return "acf";
    case SinoKind::Scatter: return "scatter";
  }
  return "line_integral";
}

SinoKind sino_kind_from_string(std::string_view s) {
  if (s == "line_integral") return SinoKind::LineIntegral;
  if (s == "counts") return SinoKind::Counts;
  if (s == "acf") return SinoKind::Acf;
  if (s == "scatter") return SinoKind::Scatter;
  throw DomainError("unknown sinogram kind '" + std::string(s) + "'");
}

double Sinogram::sum() const {
  double s = 0.0;
  for (float v : data) s += v;
  return s;
}

void ScatterConfig::validate() const {
  if (!(scatter_fraction >= 0.0 && scatter_fraction < 0.9)) {
    throw DomainError("scatter fraction must lie in [0, 0.9)");
  }
  if (!(kernel_sigma_bins > 0.0)) throw DomainError("scatter kernel sigma must be positive");
}

namespace {

// Walks the bilinear sample weights of one ray. `visit(index, weight)` is
// called for each in-image neighbor; weights already include step_mm.
template <typename Visit>
void walk_ray(const Geometry& g, int height, int width, int a, int b, Visit&& visit) {
  const double px = g.fov_mm / width;
  const double py = g.fov_mm / height;
  const double theta = g.angle(a);
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double s = (b + 0.5 - 0.5 * g.n_bins) * g.bin_mm();
  const double half_len = 0.5 * g.fov_mm * std::numbers::sqrt2;
  const int n_samples = static_cast<int>(std::ceil(2.0 * half_len / g.step_mm));
  const double t0 = -half_len + 0.5 * g.step_mm;

  // Continuous pixel coordinates: col = x/px + W/2 - 0.5, row = y/py + H/2 - 0.5.
  const double col0 = (s * ct - t0 * st) / px + 0.5 * width - 0.5;
  const double row0 = (s * st + t0 * ct) / py + 0.5 * height - 0.5;
  const double dcol = -g.step_mm * st / px;
  const double drow = g.step_mm * ct / py;

  for (int k = 0; k < n_samples; ++k) {
    const double col = col0 + k * dcol;
    const double row = row0 + k * drow;
    if (col <= -1.0 || row <= -1.0 || col >= width || row >= height) continue;
    const int c0 = static_cast<int>(std::floor(col));
    const int r0 = static_cast<int>(std::floor(row));
    const double fc = col - c0;
    const double fr = row - r0;
    const double w00 = (1.0 - fr) * (1.0 - fc) * g.step_mm;
    const double w01 = (1.0 - fr) * fc * g.step_mm;
    const double w10 = fr * (1.0 - fc) * g.step_mm;
    const double w11 = fr * fc * g.step_mm;
    const bool c0_in = c0 >= 0;
    const bool c1_in = c0 + 1 < width;
    const bool r0_in = r0 >= 0;
    const bool r1_in = r0 + 1 < height;
    if (r0_in) {
      const std::size_t base = static_cast<std::size_t>(r0) * width;
      if (c0_in) visit(base + c0, w00);
      if (c1_in) visit(base + c0 + 1, w01);
    }
    if (r1_in) {
      const std::size_t base = static_cast<std::size_t>(r0 + 1) * width;
      if (c0_in) visit(base + c0, w10);
      if (c1_in) visit(base + c0 + 1, w11);
    }
  }
}

std::vector<int> all_angles(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

Sinogram forward_project(const Image2D& image, const Geometry& geom) {
  const auto angles = all_angles(geom.n_angles);
  return forward_project(image, geom, angles);
}

Sinogram forward_project(const Image2D& image, const Geometry& geom, std::span<const int> angles) {
  geom.validate();
  Sinogram out(geom.n_angles, geom.n_bins, SinoKind::LineIntegral);
  const float* img = image.data.data();
  for (int a : angles) {
    for (int b = 0; b < geom.n_bins; ++b) {
      double acc = 0.0;
      walk_ray(geom, image.height, image.width, a, b,
               [&](std::size_t idx, double w) { acc += w * img[idx]; });
      out.at(a, b) = static_cast<float>(acc);
    }
  }
  return out;
}

Image2D back_project(const Sinogram& sino, const Geometry& geom, int height, int width) {
  const auto angles = all_angles(geom.n_angles);
  return back_project(sino, geom, height, width, angles);
}

Image2D back_project(const Sinogram& sino, const Geometry& geom, int height, int width,
                     std::span<const int> angles) {
  geom.validate();
  if (sino.n_angles != geom.n_angles || sino.n_bins != geom.n_bins) {
    throw ShapeError("sinogram shape does not match geometry");
  }
  std::vector<double> acc(static_cast<std::size_t>(height) * width, 0.0);
  for (int a : angles) {
    for (int b = 0; b < geom.n_bins; ++b) {
      const double v = sino.at(a, b);
      if (v == 0.0) continue;
      walk_ray(geom, height, width, a, b, [&](std::size_t idx, double w) { acc[idx] += w * v; });
    }
  }
  Image2D out(height, width);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i]);
  return out;
}

Sinogram attenuation_factors(const Image2D& mu, const Geometry& geom) {
  for (float m : mu.data) {
    if (!(m >= 0.0f) || !std::isfinite(m)) throw DomainError("attenuation map must be finite and >= 0");
  }
  Sinogram out = forward_project(mu, geom);
  out.kind = SinoKind::Acf;
  // mu [1/cm] * length [mm] / 10 -> dimensionless
  for (float& v : out.data) v = static_cast<float>(std::exp(-static_cast<double>(v) / 10.0));
  return out;
}

std::vector<double> gaussian_taps(double sigma) {
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * k * k / (sigma * sigma));
    taps[k + radius] = w;
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

Sinogram scatter_estimate(const Sinogram& trues_att, const ScatterConfig& cfg) {
  cfg.validate();
  for (float v : trues_att.data) {
    if (!(v >= 0.0f)) throw DomainError("scatter input must be nonnegative");
  }
  Sinogram out(trues_att.n_angles, trues_att.n_bins, SinoKind::Scatter);
  if (cfg.scatter_fraction == 0.0) return out;

  const auto taps = gaussian_taps(cfg.kernel_sigma_bins);
  const int radius = static_cast<int>(taps.size() / 2);
  std::vector<double> blurred(out.data.size(), 0.0);
  double blurred_sum = 0.0;
  double trues_sum = 0.0;
  for (int a = 0; a < trues_att.n_angles; ++a) {
    for (int b = 0; b < trues_att.n_bins; ++b) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int src = b + k;
        if (src < 0 || src >= trues_att.n_bins) continue;
        acc += taps[k + radius] * trues_att.at(a, src);
      }
      blurred[static_cast<std::size_t>(a) * trues_att.n_bins + b] = acc;
      blurred_sum += acc;
      trues_sum += trues_att.at(a, b);
    }
  }
  if (blurred_sum <= 0.0) return out;
  const double target = cfg.scatter_fraction / (1.0 - cfg.scatter_fraction) * trues_sum;
  const double scale = target / blurred_sum;
  for (std::size_t i = 0; i < blurred.size(); ++i) {
    out.data[i] = static_cast<float>(blurred[i] * scale);
  }
  return out;
}

Sinogram poisson_sample(const Sinogram& expected, std::uint64_t seed) {
  Sinogram out(expected.n_angles, expected.n_bins, SinoKind::Counts);
  for (std::size_t i = 0; i < expected.data.size(); ++i) {
    const double lambda = expected.data[i];
    if (!(lambda >= 0.0)) throw DomainError("Poisson expectation must be nonnegative");
    if (lambda == 0.0) continue;
    SplitMix64 gen(derive_seed(seed, {i}));
    std::poisson_distribution<long long> dist(lambda);
    out.data[i] = static_cast<float>(dist(gen));
  }
  return out;
}

Sinogram add_poisson(const Sinogram& sino, double total_counts, std::uint64_t seed) {
  if (!(total_counts > 0.0)) throw DomainError("total_counts must be positive");
  const double total = sino.sum();
  Sinogram expected = sino;
  if (total > 0.0) {
    const double scale = total_counts / total;
    for (float& v : expected.data) v = static_cast<float>(v * scale);
  }
  return poisson_sample(expected, seed);
}

}  // namespace ascnet
