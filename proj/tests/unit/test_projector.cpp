#include <cmath>
#include <numeric>
#include <random>

#include "ascnet/errors.hpp"
#include "ascnet/projector.hpp"
#include "doctest.h"

using namespace ascnet;

namespace {

Image2D disk(int n, double fov_mm, double radius_mm, float value) {
  Image2D img(n, n);
  const double px = fov_mm / n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double x = (c + 0.5 - 0.5 * n) * px;
      const double y = (r + 0.5 - 0.5 * n) * px;
      if (x * x + y * y <= radius_mm * radius_mm) img.at(r, c) = value;
    }
  }
  return img;
}

Geometry geometry(int n, double fov, int angles, int bins, double step) {
  Geometry g;
  g.n_angles = angles;
  g.n_bins = bins;
  g.fov_mm = fov;
  g.step_mm = step;
  (void)n;
  return g;
}

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

TEST_CASE("zero image projects to zero") {
  const Geometry g = make_geometry(Grid{32, 32, 128.0}, 8, 16);
  const Sinogram s = forward_project(Image2D(32, 32), g);
  for (float v : s.data) CHECK(v == 0.0f);
  const Image2D b = back_project(Sinogram(8, 16, SinoKind::Counts), g, 32, 32);
  for (float v : b.data) CHECK(v == 0.0f);
}

TEST_CASE("disk chord lengths match the analytic oracle") {
  // 256 px over 256 mm, radius 80 mm, step = 1/4 pixel.
  const int n = 256;
  const double fov = 256.0;
  const double r = 80.0;
  const float a = 2.0f;
  // An even bin count puts bin centers at +/- bin/2; use an odd count so the
  // middle bin passes exactly through the center.
  Geometry g = geometry(n, fov, 4, 181, 0.25);
  const Sinogram s = forward_project(disk(n, fov, r, a), g);
  const int mid = g.n_bins / 2;
  for (int ang = 0; ang < g.n_angles; ++ang) {
    CHECK(s.at(ang, mid) == doctest::Approx(2.0 * r * a).epsilon(0.01));
    for (int off : {10, 20, 30}) {
      const double d = (mid + off + 0.5 - 0.5 * g.n_bins) * g.bin_mm();
      REQUIRE(std::abs(d) < r);
      CHECK(s.at(ang, mid + off) == doctest::Approx(2.0 * a * std::sqrt(r * r - d * d)).epsilon(0.01));
    }
  }
}

TEST_CASE("back projection is the exact adjoint") {
  const Geometry g = make_geometry(Grid{64, 64, 256.0}, 48, 96);
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int trial = 0; trial < 5; ++trial) {
    Image2D x(64, 64);
    for (float& v : x.data) v = u(rng);
    Sinogram y(48, 96, SinoKind::Counts);
    for (float& v : y.data) v = u(rng);
    const Sinogram px = forward_project(x, g);
    const Image2D pty = back_project(y, g, 64, 64);
    const double lhs = dot(px.data, y.data);
    const double rhs = dot(x.data, pty.data);
    const double scale = std::sqrt(dot(px.data, px.data)) * std::sqrt(dot(y.data, y.data));
    CHECK(std::abs(lhs - rhs) / scale < 1e-5);
  }
}

TEST_CASE("single-angle back projection smears along the ray direction") {
  // Angle 0: rays run along the image rows (direction (0, 1) in (x, y)), so the
  // smear is constant down each column away from the image edges.
  const int n = 16;
  Geometry g = make_geometry(Grid{n, n, 64.0}, 4, 24);
  Sinogram s(4, 24, SinoKind::Counts);
  for (int b = 0; b < 24; ++b) s.at(0, b) = 1.0f;
  const Image2D img = back_project(s, g, n, n);
  for (int c = 1; c < n - 1; ++c) {
    for (int r = 2; r < n - 2; ++r) {
      CHECK(img.at(r, c) == doctest::Approx(img.at(2, c)).epsilon(1e-5));
    }
  }
  // Interior columns receive the same total path length.
  CHECK(img.at(5, 5) == doctest::Approx(img.at(5, 9)).epsilon(1e-5));
}

TEST_CASE("projection is linear") {
  const Geometry g = make_geometry(Grid{32, 32, 128.0}, 8, 48);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image2D a(32, 32), b(32, 32), ab(32, 32);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.data[i] = u(rng);
    b.data[i] = u(rng);
    ab.data[i] = 2.0f * a.data[i] + b.data[i];
  }
  const Sinogram pa = forward_project(a, g);
  const Sinogram pb = forward_project(b, g);
  const Sinogram pab = forward_project(ab, g);
  for (std::size_t i = 0; i < pa.data.size(); ++i) {
    CHECK(pab.data[i] == doctest::Approx(2.0 * pa.data[i] + pb.data[i]).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("attenuation factors") {
  SUBCASE("no attenuation") {
    const Geometry g = make_geometry(Grid{32, 32, 128.0}, 8, 16);
    const Sinogram acf = attenuation_factors(Image2D(32, 32), g);
    CHECK(acf.kind == SinoKind::Acf);
    for (float v : acf.data) CHECK(v == 1.0f);
  }
  SUBCASE("uniform water disk, central ray") {
    Geometry g = geometry(256, 256.0, 4, 181, 0.25);
    const Sinogram acf = attenuation_factors(disk(256, 256.0, 100.0, 0.096f), g);
    CHECK(acf.at(0, 90) == doctest::Approx(std::exp(-1.92)).epsilon(0.01));
    CHECK(acf.at(2, 90) == doctest::Approx(std::exp(-1.92)).epsilon(0.01));
  }
  SUBCASE("doubling mu squares the factors") {
    const Geometry g = make_geometry(Grid{32, 32, 128.0}, 8, 32);
    const Image2D mu = disk(32, 128.0, 40.0, 0.096f);
    Image2D mu2 = mu;
    for (float& v : mu2.data) v *= 2.0f;
    const Sinogram a1 = attenuation_factors(mu, g);
    const Sinogram a2 = attenuation_factors(mu2, g);
    for (std::size_t i = 0; i < a1.data.size(); ++i) {
      CHECK(a2.data[i] == doctest::Approx(a1.data[i] * a1.data[i]).epsilon(1e-5));
    }
  }
  SUBCASE("raising mu never raises a factor") {
    const Geometry g = make_geometry(Grid{32, 32, 128.0}, 8, 32);
    const Image2D mu = disk(32, 128.0, 40.0, 0.096f);
    Image2D more = mu;
    more.at(10, 12) += 0.5f;
    more.at(20, 20) += 0.1f;
    const Sinogram a1 = attenuation_factors(mu, g);
    const Sinogram a2 = attenuation_factors(more, g);
    for (std::size_t i = 0; i < a1.data.size(); ++i) {
      CHECK(a2.data[i] <= a1.data[i]);
      CHECK(a2.data[i] > 0.0f);
    }
  }
  SUBCASE("negative mu is rejected") {
    const Geometry g = make_geometry(Grid{16, 16, 64.0}, 4, 16);
    Image2D mu(16, 16);
    mu.at(3, 3) = -0.01f;
    CHECK_THROWS_AS(attenuation_factors(mu, g), DomainError);
  }
}

TEST_CASE("scatter estimate") {
  SUBCASE("SF = 0 gives zero scatter") {
    Sinogram t(4, 32, SinoKind::Counts, 3.0f);
    const Sinogram s = scatter_estimate(t, ScatterConfig{0.0, 6.0});
    for (float v : s.data) CHECK(v == 0.0f);
  }
  SUBCASE("SF = 0.5 preserves the total mass") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 10.0f);
    Sinogram t(8, 64, SinoKind::Counts);
    for (float& v : t.data) v = u(rng);
    const Sinogram s = scatter_estimate(t, ScatterConfig{0.5, 6.0});
    CHECK(s.sum() == doctest::Approx(t.sum()).epsilon(1e-6));
  }
  SUBCASE("mass identity for general SF") {
    Sinogram t(4, 40, SinoKind::Counts, 1.0f);
    const Sinogram s = scatter_estimate(t, ScatterConfig{0.3, 4.0});
    CHECK(s.sum() == doctest::Approx(0.3 / 0.7 * t.sum()).epsilon(1e-6));
  }
  SUBCASE("impulse response is the truncated discrete Gaussian") {
    Sinogram t(2, 64, SinoKind::Counts);
    t.at(1, 32) = 1.0f;
    const double sf = 0.25;
    const Sinogram s = scatter_estimate(t, ScatterConfig{sf, 2.0});
    // Closed form: w_k = exp(-k^2/8) / sum_{|j|<=8} exp(-j^2/8), scaled by SF/(1-SF).
    double z = 0.0;
    for (int j = -8; j <= 8; ++j) z += std::exp(-j * j / 8.0);
    for (int b = 0; b < 64; ++b) {
      const int k = b - 32;
      const double w = std::abs(k) <= 8 ? std::exp(-k * k / 8.0) / z : 0.0;
      CHECK(s.at(1, b) == doctest::Approx(sf / (1 - sf) * w).epsilon(1e-6).scale(1e-7));
      CHECK(s.at(0, b) == 0.0f);
    }
  }
}

TEST_CASE("Poisson counts") {
  SUBCASE("zero sinogram gives zero counts") {
    const Sinogram c = poisson_sample(Sinogram(4, 8, SinoKind::Counts), 1);
    for (float v : c.data) CHECK(v == 0.0f);
  }
  SUBCASE("fixed seed is reproducible") {
    Sinogram s(10, 20, SinoKind::Counts, 1.0f);
    const Sinogram a = add_poisson(s, 1e4, 99);
    const Sinogram b = add_poisson(s, 1e4, 99);
    CHECK(a.data == b.data);
    const Sinogram c = add_poisson(s, 1e4, 100);
    CHECK(a.data != c.data);
  }
  SUBCASE("moments follow the Poisson law") {
    Sinogram s(100, 100, SinoKind::Counts, 0.5f);
    const Sinogram c = add_poisson(s, 1e7, 2024);
    double mean = 0.0;
    for (float v : c.data) mean += v;
    mean /= c.data.size();
    double var = 0.0;
    for (float v : c.data) var += (v - mean) * (v - mean);
    var /= c.data.size() - 1;
    CHECK(mean == doctest::Approx(1000.0).epsilon(0.01));
    CHECK(var / mean >= 0.95);
    CHECK(var / mean <= 1.05);
  }
  SUBCASE("nonpositive total is rejected") {
    CHECK_THROWS_AS(add_poisson(Sinogram(2, 8, SinoKind::Counts), 0.0, 1), DomainError);
  }
}
