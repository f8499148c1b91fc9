#include "ascnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ascnet/errors.hpp"
#include "json.hpp"

namespace ascnet {

namespace {

void require_same(const ImageVolume& a, const ImageVolume& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": volumes differ in shape");
}

void require_mask(const BodyMask& m, const ImageVolume& v, const char* what) {
  if (m.slices != v.slices || m.height != v.height || m.width != v.width) {
    throw ShapeError(std::string(what) + ": mask does not match volume");
  }
  if (m.count() == 0) throw DomainError(std::string(what) + ": empty mask");
}

// 3x3 dilation then erosion. Outside the image counts as foreground for the
// erosion so the closing never removes border pixels.
void close3x3(std::uint8_t* m, int h, int w) {
  std::vector<std::uint8_t> dil(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::uint8_t v = 0;
      for (int dr = -1; dr <= 1 && !v; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < h && cc >= 0 && cc < w && m[rr * w + cc]) {
            v = 1;
            break;
          }
        }
      }
      dil[r * w + c] = v;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::uint8_t v = 1;
      for (int dr = -1; dr <= 1 && v; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < h && cc >= 0 && cc < w && !dil[rr * w + cc]) {
            v = 0;
            break;
          }
        }
      }
      m[r * w + c] = v;
    }
  }
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(size);
  const double c = 0.5 * (size - 1);
  for (int i = 0; i < size; ++i) g[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
  const double s = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= s;
  return g;
}

// Separable "valid" filtering of an h x w image with a 1-D kernel.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * img[r * w + c + i];
      tmp[r * ow + c] = s;
    }
  }
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[(r + i) * ow + c];
      out[r * ow + c] = s;
    }
  }
  return out;
}

double ssim_slice(std::span<const float> x, std::span<const float> y, int h, int w, double L) {
  static const std::vector<double> win = gaussian_window(11, 1.5);
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  const std::size_t n = x.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = x[i];
    b[i] = y[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto ma = filter_valid(a, h, w, win), mb = filter_valid(b, h, w, win);
  const auto saa = filter_valid(aa, h, w, win), sbb = filter_valid(bb, h, w, win), sab = filter_valid(ab, h, w, win);
  double total = 0.0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i];
    const double vb = sbb[i] - mb[i] * mb[i];
    const double cov = sab[i] - ma[i] * mb[i];
    total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(ma.size());
}

Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

nlohmann::ordered_json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

std::size_t BodyMask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

BodyMask body_mask(const ImageVolume& reference, double frac) {
  BodyMask m{reference.slices, reference.height, reference.width,
             std::vector<std::uint8_t>(reference.data.size(), 0), "threshold_close3x3"};
  float peak = 0.0f;
  for (float v : reference.data) {
    if (v < 0.0f) throw DomainError("body_mask: reference has negative values");
    peak = std::max(peak, v);
  }
  if (peak <= 0.0f) throw DomainError("body_mask: reference is all zero, mask would be empty");
  const float thr = static_cast<float>(frac * peak);
  for (std::size_t i = 0; i < reference.data.size(); ++i) m.data[i] = reference.data[i] > thr;
  const std::size_t plane = reference.slice_size();
  for (int s = 0; s < m.slices; ++s) close3x3(m.data.data() + s * plane, m.height, m.width);
  return m;
}

BodyMask full_mask(const ImageVolume& like) {
  return {like.slices, like.height, like.width, std::vector<std::uint8_t>(like.data.size(), 1), "whole_image"};
}

double nrmse(const ImageVolume& pred, const ImageVolume& ref, const BodyMask& mask) {
  require_same(pred, ref, "nrmse");
  require_mask(mask, ref, "nrmse");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    if (!mask.data[i]) continue;
    const double d = static_cast<double>(pred.data[i]) - ref.data[i];
    num += d * d;
    den += static_cast<double>(ref.data[i]) * ref.data[i];
  }
  if (den == 0.0) throw DomainError("nrmse: reference norm is zero on the mask");
  return std::sqrt(num / den);
}

double psnr(const ImageVolume& pred, const ImageVolume& ref, const BodyMask& mask) {
  require_same(pred, ref, "psnr");
  require_mask(mask, ref, "psnr");
  double se = 0.0, peak = -std::numeric_limits<double>::infinity();
  std::size_t n = 0;
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    if (!mask.data[i]) continue;
    const double d = static_cast<double>(pred.data[i]) - ref.data[i];
    se += d * d;
    peak = std::max(peak, static_cast<double>(ref.data[i]));
    ++n;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / (se / static_cast<double>(n)));
}

double ssim(const ImageVolume& pred, const ImageVolume& ref) {
  require_same(pred, ref, "ssim");
  if (ref.height < 11 || ref.width < 11) throw ShapeError("ssim: slices must be at least 11x11");
  const auto [lo, hi] = std::minmax_element(ref.data.begin(), ref.data.end());
  const double L = static_cast<double>(*hi) - *lo;
  if (!(L > 0.0)) throw DomainError("ssim: reference is constant (dynamic range 0)");
  double total = 0.0;
  for (int s = 0; s < ref.slices; ++s) total += ssim_slice(pred.slice(s), ref.slice(s), ref.height, ref.width, L);
  return total / ref.slices;
}

double suv(double uptake_MBq_per_ml, double dose_MBq, double weight_g) {
  if (!(dose_MBq > 0.0) || !(weight_g > 0.0)) throw DomainError("suv: dose and weight must be positive");
  return uptake_MBq_per_ml / dose_MBq * weight_g;
}

ImageVolume suv(const ImageVolume& activity, double dose_MBq, double weight_g) {
  double to_mbq = 0.0;
  if (activity.units == Units::kBqPerMl) {
    to_mbq = 1e-3;
  } else if (activity.units == Units::BqPerMl) {
    to_mbq = 1e-6;
  } else {
    throw DomainError("suv: activity must be in kBq/mL or Bq/mL");
  }
  ImageVolume out = activity;
  out.units = Units::Unitless;
  for (float& v : out.data) v = static_cast<float>(suv(v * to_mbq, dose_MBq, weight_g));
  return out;
}

std::vector<double> JointHistogram::display() const {
  std::vector<double> d(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) d[i] = std::log10(1.0 + static_cast<double>(counts[i]));
  return d;
}

JointHistogram joint_histogram(std::span<const float> pred, std::span<const float> ref, double lo, double hi,
                               int bins) {
  if (pred.size() != ref.size()) throw ShapeError("joint_histogram: inputs differ in size");
  if (!(hi > lo) || bins < 1) throw DomainError("joint_histogram: bad range or bin count");
  JointHistogram h;
  h.bins = bins;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(static_cast<std::size_t>(bins) * bins, 0);
  auto bin = [&](double v) {
    return std::min(bins - 1, static_cast<int>(std::floor((v - lo) / (hi - lo) * bins)));
  };
  std::vector<std::pair<double, double>> xy;
  double sxy = 0.0, sxx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double x = ref[i], y = pred[i];
    if (x < lo || x > hi || y < lo || y > hi) continue;
    ++h.counts[static_cast<std::size_t>(bin(y)) * bins + bin(x)];
    xy.emplace_back(x, y);
    sxy += x * y;
    sxx += x * x;
    sy += y;
  }
  h.pairs = xy.size();
  if (h.pairs < 10) {
    throw DomainError("joint_histogram: only " + std::to_string(h.pairs) + " voxel pairs in range (need 10)");
  }
  h.slope = sxy / sxx;
  const double mean_y = sy / static_cast<double>(h.pairs);
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& [x, y] : xy) {
    ss_res += (y - h.slope * x) * (y - h.slope * x);
    ss_tot += (y - mean_y) * (y - mean_y);
  }
  if (ss_tot > 0.0) {
    h.r2 = 1.0 - ss_res / ss_tot;
  } else {
    h.r2 = ss_res == 0.0 ? 1.0 : 0.0;
  }
  return h;
}

void write_histogram_pgm(const JointHistogram& h, const std::filesystem::path& path) {
  const std::vector<double> d = h.display();
  const double peak = *std::max_element(d.begin(), d.end());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << h.bins << ' ' << h.bins << "\n255\n";
  for (int r = h.bins - 1; r >= 0; --r) {
    for (int c = 0; c < h.bins; ++c) {
      const double v = peak > 0.0 ? d[static_cast<std::size_t>(r) * h.bins + c] / peak : 0.0;
      f.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
  if (!f) throw IoError("failed writing " + path.string());
}

PsnrGroups stratify_by_psnr(const std::vector<double>& psnr_db) {
  PsnrGroups g;
  for (std::size_t i = 0; i < psnr_db.size(); ++i) {
    const double p = psnr_db[i];
    if (p >= 10.0) {
      g.g1.push_back(i);
    } else if (p >= 0.0) {
      g.g2.push_back(i);
    } else {
      g.g3.push_back(i);
    }
  }
  return g;
}

DifferenceReport difference_report(const ImageVolume& pred, const ImageVolume& ref, const BodyMask& mask) {
  require_same(pred, ref, "difference_report");
  require_mask(mask, ref, "difference_report");
  DifferenceReport r;
  r.diff = ref;
  r.max_pred = -std::numeric_limits<double>::infinity();
  r.max_ref = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    r.diff.data[i] = pred.data[i] - ref.data[i];
    if (!mask.data[i]) continue;
    r.max_pred = std::max(r.max_pred, static_cast<double>(pred.data[i]));
    r.max_ref = std::max(r.max_ref, static_cast<double>(ref.data[i]));
  }
  if (r.max_ref == 0.0) throw DomainError("difference_report: reference maximum is zero");
  r.percent_error = 100.0 * (r.max_pred - r.max_ref) / r.max_ref;
  return r;
}

MetricsReport evaluate(const std::vector<SubjectInput>& subjects, bool whole_image) {
  if (subjects.empty()) throw ConfigError("evaluate: no subjects");
  MetricsReport rep;
  rep.whole_image = whole_image;
  std::vector<double> nr, ps, ss;
  std::vector<float> pooled_pred, pooled_ref;
  for (const SubjectInput& s : subjects) {
    require_same(s.pred, s.ref, s.id.c_str());
    const BodyMask mask = whole_image ? full_mask(s.ref) : body_mask(s.ref);
    SubjectMetrics m;
    m.id = s.id;
    m.nrmse = nrmse(s.pred, s.ref, mask);
    m.psnr_db = psnr(s.pred, s.ref, mask);
    m.ssim = ssim(s.pred, s.ref);
    const ImageVolume sp = suv(s.pred, s.dose_MBq, s.weight_g);
    const ImageVolume sr = suv(s.ref, s.dose_MBq, s.weight_g);
    const DifferenceReport d = difference_report(sp, sr, mask);
    m.suv_max_pred = d.max_pred;
    m.suv_max_ref = d.max_ref;
    m.suv_max_percent_error = d.percent_error;
    pooled_pred.insert(pooled_pred.end(), sp.data.begin(), sp.data.end());
    pooled_ref.insert(pooled_ref.end(), sr.data.begin(), sr.data.end());
    nr.push_back(m.nrmse);
    ps.push_back(m.psnr_db);
    ss.push_back(m.ssim);
    rep.subjects.push_back(m);
  }
  rep.nrmse = aggregate(nr);
  rep.psnr_db = aggregate(ps);
  rep.ssim = aggregate(ss);
  rep.histogram = joint_histogram(pooled_pred, pooled_ref);
  rep.groups = stratify_by_psnr(ps);
  return rep;
}

std::string MetricsReport::to_json() const {
  using J = nlohmann::ordered_json;
  J j;
  j["schema_version"] = 1;
  j["mask"] = whole_image ? "whole_image" : "body";
  J subs = J::array();
  for (const SubjectMetrics& m : subjects) {
    subs.push_back({{"id", m.id},
                    {"nrmse", m.nrmse},
                    {"psnr_db", number_or_inf(m.psnr_db)},
                    {"ssim", m.ssim},
                    {"suv_max_pred", m.suv_max_pred},
                    {"suv_max_ref", m.suv_max_ref},
                    {"suv_max_percent_error", m.suv_max_percent_error}});
  }
  j["subjects"] = subs;
  auto agg = [](const Aggregate& a) { return J{{"mean", number_or_inf(a.mean)}, {"std", number_or_inf(a.std)}}; };
  j["aggregate"] = {{"nrmse", agg(nrmse)}, {"psnr_db", agg(psnr_db)}, {"ssim", agg(ssim)}};
  J counts = J::array();
  for (int r = 0; r < histogram.bins; ++r) {
    counts.push_back(std::vector<std::uint64_t>(histogram.counts.begin() + r * histogram.bins,
                                                histogram.counts.begin() + (r + 1) * histogram.bins));
  }
  j["joint_histogram"] = {{"range", {histogram.lo, histogram.hi}},
                          {"bins", histogram.bins},
                          {"pairs", histogram.pairs},
                          {"slope", histogram.slope},
                          {"r2", histogram.r2},
                          {"counts", counts}};
  auto ids = [&](const std::vector<std::size_t>& idx) {
    J a = J::array();
    for (std::size_t i : idx) a.push_back(subjects[i].id);
    return a;
  };
  j["groups"] = {{"G1", ids(groups.g1)}, {"G2", ids(groups.g2)}, {"G3", ids(groups.g3)}};
  return j.dump(2) + "\n";
}

}  // namespace ascnet
