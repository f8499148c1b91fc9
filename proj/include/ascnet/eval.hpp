#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ascnet/volume.hpp"

namespace ascnet {

struct BodyMask {
  int slices = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;
  std::string rule;

  std::size_t count() const;
};

/// reference > frac * max(reference), then a per-slice 3x3 closing.
BodyMask body_mask(const ImageVolume& reference, double frac = 0.05);
/// Every voxel; for whole-image metric variants.
BodyMask full_mask(const ImageVolume& like);

/// ||pred - ref|| / ||ref|| over the mask.
double nrmse(const ImageVolume& pred, const ImageVolume& ref, const BodyMask& mask);

/// 10 log10(peak^2 / MSE) with peak = max(ref) over the mask; +inf when MSE = 0.
double psnr(const ImageVolume& pred, const ImageVolume& ref, const BodyMask& mask);

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) averaged over
/// fully covered windows of each slice, then over slices. L is the range of
/// the whole reference volume.
double ssim(const ImageVolume& pred, const ImageVolume& ref);

double suv(double uptake_MBq_per_ml, double dose_MBq, double weight_g);
/// Volume in kBq/mL (or Bq/mL) to SUV (g/mL, stored as unitless).
ImageVolume suv(const ImageVolume& activity, double dose_MBq, double weight_g);

struct JointHistogram {
  int bins = 100;
  double lo = 0.5;
  double hi = 20.0;
  std::vector<std::uint64_t> counts;  // [pred_bin * bins + ref_bin]
  std::size_t pairs = 0;
  double slope = 0.0;
  double r2 = 0.0;

  /// log10(1 + n) per cell.
  std::vector<double> display() const;
};

/// Pairs with both values inside [lo, hi]. Slope is the least-squares fit
/// pred = slope * ref through the origin; R^2 = 1 - SS_res / SS_tot with
/// SS_tot centered on the mean prediction.
JointHistogram joint_histogram(std::span<const float> pred, std::span<const float> ref, double lo = 0.5,
                               double hi = 20.0, int bins = 100);

/// 8-bit binary PGM of the log-scaled grid, prediction axis pointing up.
void write_histogram_pgm(const JointHistogram& h, const std::filesystem::path& path);

struct PsnrGroups {
  std::vector<std::size_t> g1;  // psnr >= 10
  std::vector<std::size_t> g2;  // 0 <= psnr < 10
  std::vector<std::size_t> g3;  // psnr < 0
};

PsnrGroups stratify_by_psnr(const std::vector<double>& psnr_db);

struct DifferenceReport {
  ImageVolume diff;  // pred - ref
  double max_pred = 0.0;
  double max_ref = 0.0;
  double percent_error = 0.0;
};

DifferenceReport difference_report(const ImageVolume& pred, const ImageVolume& ref, const BodyMask& mask);

struct SubjectInput {
  std::string id;
  ImageVolume pred;  // kBq/mL
  ImageVolume ref;   // kBq/mL
  double dose_MBq = 0.0;
  double weight_g = 0.0;
};

struct SubjectMetrics {
  std::string id;
  double nrmse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double suv_max_pred = 0.0;
  double suv_max_ref = 0.0;
  double suv_max_percent_error = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single subject
};

struct MetricsReport {
  std::vector<SubjectMetrics> subjects;
  Aggregate nrmse, psnr_db, ssim;
  JointHistogram histogram;
  PsnrGroups groups;
  bool whole_image = false;

  /// Stable JSON text. +inf PSNR is written as the string "inf".
  std::string to_json() const;
};

/// Per-subject metrics, aggregates, pooled SUV joint histogram and groups.
MetricsReport evaluate(const std::vector<SubjectInput>& subjects, bool whole_image = false);

}  // namespace ascnet
