#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <vector>

#include "ascnet/errors.hpp"
#include "ascnet/eval.hpp"
#include "ascnet/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace ascnet;

namespace {

ImageVolume vol(int s, int h, int w, Units u = Units::kBqPerMl) { return ImageVolume(s, h, w, {2, 2, 2}, u); }

// Uniform disk of radius r (pixels) centered in each slice.
ImageVolume disk(int n, double r, float value, int slices = 1) {
  ImageVolume v = vol(slices, n, n);
  for (int s = 0; s < slices; ++s)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dy = y - (n - 1) / 2.0, dx = x - (n - 1) / 2.0;
        if (dx * dx + dy * dy <= r * r) v.data[(static_cast<std::size_t>(s) * n + y) * n + x] = value;
      }
  return v;
}

// Structured 32x32 test image: two blobs of different height on a ramp.
ImageVolume structured(int slices = 1) {
  ImageVolume v = vol(slices, 32, 32);
  for (int s = 0; s < slices; ++s)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const double a = std::exp(-((x - 10.0) * (x - 10.0) + (y - 12.0) * (y - 12.0)) / 18.0);
        const double b = std::exp(-((x - 22.0) * (x - 22.0) + (y - 20.0) * (y - 20.0)) / 8.0);
        v.data[(static_cast<std::size_t>(s) * 32 + y) * 32 + x] = static_cast<float>(1.0 + 0.05 * x + 4 * a + 2.5 * b);
      }
  return v;
}

// Straightforward SSIM: explicit 11x11 window sums at every fully covered
// position, no separable filtering.
double naive_ssim(const ImageVolume& p, const ImageVolume& r) {
  double lo = r.data[0], hi = r.data[0];
  for (float v : r.data) lo = std::min<double>(lo, v), hi = std::max<double>(hi, v);
  const double L = hi - lo, c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  double g[11][11], gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
  double total = 0;
  for (int s = 0; s < r.slices; ++s) {
    double acc = 0;
    int n = 0;
    for (int y = 0; y + 11 <= r.height; ++y)
      for (int x = 0; x + 11 <= r.width; ++x) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const std::size_t k = (static_cast<std::size_t>(s) * r.height + y + i) * r.width + x + j;
            const double w = g[i][j] / gs, a = p.data[k], b = r.data[k];
            mx += w * a, my += w * b, xx += w * a * a, yy += w * b * b, xy += w * a * b;
          }
        const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
        acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++n;
      }
    total += acc / n;
  }
  return total / r.slices;
}

}  // namespace

TEST_CASE("body mask thresholds a uniform disk to its support") {
  const ImageVolume d = disk(24, 7.5, 3.0f, 2);
  const BodyMask m = body_mask(d);
  REQUIRE(m.data.size() == d.data.size());
  for (std::size_t i = 0; i < d.data.size(); ++i) CHECK(m.data[i] == (d.data[i] > 0 ? 1 : 0));
}

TEST_CASE("body mask closes a one-pixel hole") {
  ImageVolume d = disk(24, 8.0, 2.0f);
  d.data[12 * 24 + 12] = 0.0f;
  const BodyMask m = body_mask(d);
  CHECK(m.data[12 * 24 + 12] == 1);
  // Enumerated oracle: a closing never removes pixels and only adds the hole.
  std::size_t added = 0;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    if (d.data[i] > 0) CHECK(m.data[i] == 1);
    if (d.data[i] == 0 && m.data[i]) ++added;
  }
  CHECK(added == 1);
}

TEST_CASE("body mask rejects zero or negative references") {
  CHECK_THROWS_AS(body_mask(vol(1, 8, 8)), DomainError);
  ImageVolume neg = disk(8, 3, 1.0f);
  neg.data[0] = -1.0f;
  CHECK_THROWS_AS(body_mask(neg), DomainError);
}

TEST_CASE("nrmse identities and closed forms") {
  const ImageVolume ref = structured();
  const BodyMask m = full_mask(ref);
  CHECK(nrmse(ref, ref, m) == 0.0);
  ImageVolume scaled = ref;
  for (float& v : scaled.data) v *= 1.1f;
  CHECK(nrmse(scaled, ref, m) == doctest::Approx(0.1).epsilon(1e-6));
  for (double k : {0.5, 0.9, 2.0}) {
    ImageVolume s = ref;
    for (float& v : s.data) v = static_cast<float>(v * k);
    CHECK(nrmse(s, ref, m) == doctest::Approx(std::abs(k - 1)).epsilon(1e-6));
  }

  const ImageVolume d = disk(20, 6.0, 4.0f);
  const BodyMask dm = body_mask(d);
  ImageVolume off = d;
  const double c = 0.25;
  for (std::size_t i = 0; i < off.data.size(); ++i)
    if (dm.data[i]) off.data[i] += static_cast<float>(c);
  const double n = static_cast<double>(dm.count());
  CHECK(nrmse(off, d, dm) == doctest::Approx(c * std::sqrt(n) / (4.0 * std::sqrt(n))).epsilon(1e-6));

  CHECK_THROWS_AS(nrmse(vol(1, 4, 4), vol(1, 4, 4), full_mask(vol(1, 4, 4))), DomainError);
  CHECK_THROWS_AS(nrmse(vol(1, 4, 4), vol(1, 4, 5), full_mask(vol(1, 4, 4))), ShapeError);
}

TEST_CASE("psnr hand values and scale invariance") {
  ImageVolume ref = vol(1, 10, 10);
  ref.data[0] = 1.0f;
  ImageVolume pred = ref;
  const BodyMask m = full_mask(ref);
  CHECK(std::isinf(psnr(ref, ref, m)));
  CHECK(psnr(ref, ref, m) > 0);
  // One voxel off by 1 in 100 -> MSE 0.01.
  pred.data[50] = 1.0f;
  CHECK(psnr(pred, ref, m) == doctest::Approx(20.0).epsilon(1e-9));

  const ImageVolume a = structured();
  ImageVolume b = a;
  for (std::size_t i = 0; i < b.data.size(); i += 7) b.data[i] += 0.3f;
  const double base = psnr(b, a, full_mask(a));
  for (double k : {0.25, 3.0, 1000.0}) {
    ImageVolume ka = a, kb = b;
    for (float& v : ka.data) v = static_cast<float>(v * k);
    for (float& v : kb.data) v = static_cast<float>(v * k);
    CHECK(psnr(kb, ka, full_mask(a)) == doctest::Approx(base).epsilon(1e-5));
  }

  BodyMask empty = full_mask(ref);
  std::fill(empty.data.begin(), empty.data.end(), 0);
  CHECK_THROWS_AS(psnr(pred, ref, empty), DomainError);
}

TEST_CASE("ssim identity, inversion and noise") {
  const ImageVolume ref = structured(2);
  CHECK(ssim(ref, ref) == doctest::Approx(1.0).epsilon(1e-12));

  double hi = 0;
  for (float v : ref.data) hi = std::max<double>(hi, v);
  ImageVolume inv = ref;
  for (float& v : inv.data) v = static_cast<float>(hi - v);
  const double s_inv = ssim(inv, ref);
  CHECK(s_inv < 0.5);
  CHECK(s_inv == doctest::Approx(naive_ssim(inv, ref)).epsilon(1e-6));

  double lo = hi;
  for (float v : ref.data) lo = std::min<double>(lo, v);
  ImageVolume noisy = ref;
  SplitMix64 rng(3);
  std::normal_distribution<double> nd;
  for (float& v : noisy.data) v = static_cast<float>(v + 1e-6 * (hi - lo) * nd(rng));
  CHECK(ssim(noisy, ref) > 0.9999);

  ImageVolume blur = ref;
  for (std::size_t i = 1; i < blur.data.size(); ++i) blur.data[i] = 0.5f * (ref.data[i] + ref.data[i - 1]);
  CHECK(ssim(blur, ref) == doctest::Approx(naive_ssim(blur, ref)).epsilon(1e-6));

  CHECK_THROWS_AS(ssim(disk(16, 20, 1.0f), disk(16, 20, 1.0f)), DomainError);
  CHECK_THROWS_AS(ssim(vol(1, 8, 8), vol(1, 8, 8)), ShapeError);
}

TEST_CASE("suv arithmetic") {
  CHECK(suv(0.005, 370, 74000) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(suv(0.0, 370, 74000) == 0.0);
  CHECK(suv(0.004, 300, 140000) == doctest::Approx(2 * suv(0.004, 300, 70000)).epsilon(1e-12));
  CHECK_THROWS_AS(suv(1, 0, 70000), DomainError);
  CHECK_THROWS_AS(suv(1, 370, -1), DomainError);

  ImageVolume kbq = vol(1, 1, 2);
  kbq.data = {5.0f, 0.0f};  // 5 kBq/mL = 0.005 MBq/mL
  const ImageVolume s = suv(kbq, 370, 74000);
  CHECK(s.data[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.data[1] == 0.0f);
  ImageVolume bq = vol(1, 1, 1, Units::BqPerMl);
  bq.data = {5000.0f};
  CHECK(suv(bq, 370, 74000).data[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(suv(vol(1, 1, 1, Units::PerCm), 370, 74000), DomainError);
}

TEST_CASE("joint histogram regression") {
  std::vector<float> ref;
  for (int i = 0; i < 500; ++i) ref.push_back(0.6f + 0.018f * i);
  const JointHistogram id = joint_histogram(ref, ref);
  CHECK(id.pairs == ref.size());
  CHECK(std::abs(id.slope - 1.0) < 1e-9);
  CHECK(std::abs(id.r2 - 1.0) < 1e-9);
  std::uint64_t total = 0;
  for (int b = 0; b < id.bins; ++b) total += id.counts[b * id.bins + b];
  CHECK(total == ref.size());

  std::vector<float> half(ref.begin(), ref.begin() + 200), dbl;
  for (float v : half) dbl.push_back(2 * v);
  const JointHistogram two = joint_histogram(dbl, half);
  CHECK(two.slope == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(two.r2 == doctest::Approx(1.0).epsilon(1e-9));

  // Out-of-range pairs are dropped.
  std::vector<float> p = {0.1f, 25.0f, 5.0f}, r = {5.0f, 5.0f, 0.2f};
  CHECK_THROWS_AS(joint_histogram(p, r), DomainError);
  CHECK_THROWS_AS(joint_histogram(std::vector<float>(3), std::vector<float>(4)), ShapeError);

  // Scattered pairs: slope matches the closed form on in-range pairs only.
  SplitMix64 rng(9);
  std::normal_distribution<double> nd;
  std::vector<float> x, y;
  for (int i = 0; i < 2000; ++i) {
    const double a = 0.2 + 21.0 * (i / 2000.0);
    x.push_back(static_cast<float>(a));
    y.push_back(static_cast<float>(1.05 * a + 0.3 * nd(rng)));
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.5 || x[i] > 20 || y[i] < 0.5 || y[i] > 20) continue;
    sxy += double(x[i]) * y[i];
    sxx += double(x[i]) * x[i];
  }
  const JointHistogram h = joint_histogram(y, x);
  CHECK(h.slope == doctest::Approx(sxy / sxx).epsilon(1e-9));
  CHECK(h.r2 > 0.9);
  CHECK(h.r2 < 1.0);
  const auto disp = h.display();
  for (std::size_t i = 0; i < disp.size(); ++i)
    CHECK(disp[i] == doctest::Approx(std::log10(1.0 + h.counts[i])));
}

TEST_CASE("histogram PGM is a binary 8-bit image") {
  std::vector<float> ref;
  for (int i = 0; i < 100; ++i) ref.push_back(1.0f + 0.1f * i);
  const JointHistogram h = joint_histogram(ref, ref, 0.5, 20.0, 20);
  const auto path = std::filesystem::temp_directory_path() / "ascnet_test_hist.pgm";
  write_histogram_pgm(h, path);
  std::ifstream f(path, std::ios::binary);
  std::string magic;
  int w = 0, hh = 0, maxv = 0;
  f >> magic >> w >> hh >> maxv;
  f.get();
  CHECK(magic == "P5");
  CHECK(w == 20);
  CHECK(hh == 20);
  CHECK(maxv == 255);
  std::vector<unsigned char> px(400);
  f.read(reinterpret_cast<char*>(px.data()), 400);
  CHECK(f.gcount() == 400);
  // Diagonal pairs, prediction axis up: bottom-left cell is lit, top-left dark.
  CHECK(px[19 * 20 + 0] > 0);
  CHECK(px[0] == 0);
  std::filesystem::remove(path);
}

TEST_CASE("psnr stratification boundaries") {
  const auto g = stratify_by_psnr({12.0, 5.0, -1.0, 10.0, 0.0, std::numeric_limits<double>::infinity()});
  CHECK(g.g1 == std::vector<std::size_t>{0, 3, 5});
  CHECK(g.g2 == std::vector<std::size_t>{1, 4});
  CHECK(g.g3 == std::vector<std::size_t>{2});
}

TEST_CASE("difference report") {
  const ImageVolume ref = structured();
  const BodyMask m = full_mask(ref);
  const DifferenceReport same = difference_report(ref, ref, m);
  CHECK(same.percent_error == 0.0);
  for (float v : same.diff.data) CHECK(v == 0.0f);

  ImageVolume under = ref;
  for (float& v : under.data) v *= 0.865f;
  CHECK(difference_report(under, ref, m).percent_error == doctest::Approx(-13.5).epsilon(1e-5));

  ImageVolume hot = ref;
  const auto it = std::max_element(hot.data.begin(), hot.data.end());
  *it *= 1.1f;
  const DifferenceReport d = difference_report(hot, ref, m);
  CHECK(d.percent_error == doctest::Approx(10.0).epsilon(1e-5));
  CHECK(d.diff.data[it - hot.data.begin()] > 0.0f);

  BodyMask empty = m;
  std::fill(empty.data.begin(), empty.data.end(), 0);
  CHECK_THROWS_AS(difference_report(ref, ref, empty), DomainError);
}

TEST_CASE("evaluate reference against itself") {
  std::vector<SubjectInput> subs;
  for (int i = 0; i < 3; ++i) {
    SubjectInput s;
    s.id = "s" + std::to_string(i);
    s.ref = structured(2);
    for (float& v : s.ref.data) v *= 1.0f + 0.3f * i;
    s.pred = s.ref;
    s.dose_MBq = 300;
    s.weight_g = 70000;
    subs.push_back(s);
  }
  const MetricsReport rep = evaluate(subs);
  REQUIRE(rep.subjects.size() == 3);
  for (const auto& m : rep.subjects) {
    CHECK(m.nrmse == 0.0);
    CHECK(m.ssim == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isinf(m.psnr_db));
    CHECK(m.suv_max_percent_error == 0.0);
  }
  CHECK(std::abs(rep.histogram.slope - 1.0) < 1e-9);
  CHECK(std::abs(rep.histogram.r2 - 1.0) < 1e-9);
  CHECK(rep.groups.g1.size() == 3);

  const auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j["schema_version"] == 1);
  CHECK(j["mask"] == "body");
  CHECK(j["subjects"].size() == 3);
  CHECK(j["subjects"][0]["psnr_db"] == "inf");
  CHECK(j["aggregate"]["nrmse"]["mean"] == 0.0);
  CHECK(j["joint_histogram"]["counts"].size() == 100);
  CHECK(j["joint_histogram"]["counts"][0].size() == 100);
  CHECK(j["groups"]["G1"] == nlohmann::json::array({"s0", "s1", "s2"}));
  CHECK(rep.to_json() == evaluate(subs).to_json());
}

TEST_CASE("evaluate aggregates use the sample standard deviation") {
  std::vector<SubjectInput> subs;
  for (float k : {1.1f, 1.3f}) {
    SubjectInput s;
    s.id = "x";
    s.ref = structured();
    s.pred = s.ref;
    for (float& v : s.pred.data) v *= k;
    s.dose_MBq = 300;
    s.weight_g = 70000;
    subs.push_back(s);
  }
  const MetricsReport rep = evaluate(subs, true);
  CHECK(rep.nrmse.mean == doctest::Approx(0.2).epsilon(1e-5));
  CHECK(rep.nrmse.std == doctest::Approx(std::sqrt(0.02)).epsilon(1e-4));
  CHECK(nlohmann::json::parse(rep.to_json())["mask"] == "whole_image");
}
