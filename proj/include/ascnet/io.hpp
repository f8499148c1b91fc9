#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ascnet/phantom.hpp"
#include "ascnet/train.hpp"
#include "ascnet/volume.hpp"

namespace ascnet {

namespace fs = std::filesystem;

/// <name>.f32 (little-endian float32, slice/row/column order) plus a
/// <name>.json sidecar with shape, voxel size, units and kind.
struct RawVolume {
  ImageVolume volume;
  std::string kind;
};

/// `path` may name the .f32 payload, the .json sidecar or the bare stem.
void write_raw_volume(const fs::path& path, const ImageVolume& v, const std::string& kind);
RawVolume read_raw_volume(const fs::path& path);
fs::path payload_path(const fs::path& path);
fs::path sidecar_path(const fs::path& path);

struct SubjectEntry {
  std::string id;
  std::string nc_path;   // relative to the manifest directory
  std::string asc_path;
  double dose_MBq = 0.0;
  double weight_g = 0.0;
  double duration_s = 0.0;
  std::string preset;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/// Simulation settings that produced a dataset, kept so it can be rebuilt.
struct SimulationRecord {
  std::string preset = "brain";
  int subjects = 35;
  int size = 64;
  int slices = 16;
  int angles = 48;
  int bins = 96;
  double fov_mm = 256.0;
  double counts = 2.0e6;
  double scatter_fraction = 0.3;
  double scatter_sigma_bins = 6.0;
  bool couch = true;
  double variability = 1.0;
  int iterations = 4;
  int subsets = 8;
  double post_filter_fwhm_mm = 4.0;
  std::uint64_t seed = 1;
};

struct DatasetManifest {
  int schema_version = 1;
  std::vector<SubjectEntry> subjects;
  Split split;
  SimulationRecord simulation;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);

  const SubjectEntry& subject(const std::string& id) const;
  /// Unique ids, split ids known and disjoint; with `base_dir` also checks
  /// that every referenced volume exists. Throws ConfigError naming the id.
  void validate(const fs::path* base_dir = nullptr) const;
};

DatasetManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const DatasetManifest& m);

/// round(n * 25 / 35) training subjects, assigned round-robin in id order.
Split default_split(const std::vector<std::string>& ids);

std::string phantom_to_json(const Phantom& p);
Phantom phantom_from_json(const std::string& text);

std::string simulation_record_to_json(const SimulationRecord& r);
/// Overrides only the keys present in `text`.
SimulationRecord simulation_record_from_json(const std::string& text, SimulationRecord base = {});

/// TrainConfig as JSON. Parsing starts from `base` and overrides only the
/// keys present, so a config file can be partial.
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});

std::string read_text(const fs::path& path);
/// Writes through a temporary file and renames it into place.
void write_text(const fs::path& path, const std::string& text);
std::vector<std::uint8_t> read_bytes(const fs::path& path);

}  // namespace ascnet
