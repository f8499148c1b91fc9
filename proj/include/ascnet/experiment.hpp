#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ascnet/eval.hpp"
#include "ascnet/io.hpp"
#include "ascnet/recon.hpp"
#include "ascnet/train.hpp"

namespace ascnet {

SimulationConfig simulation_config(const SimulationRecord& r);

using ProgressFn = std::function<void(const std::string&)>;

/// Simulates r.subjects phantoms into `out_dir`: per subject the NC and ASC
/// volumes (Bq/mL) and the phantom JSON, then manifest.json with the default
/// split. Returns the manifest.
DatasetManifest simulate_dataset(const SimulationRecord& r, const fs::path& out_dir,
                                 const ProgressFn& progress = {});

/// Preprocessed slices of the manifest's training subjects.
std::vector<SlicePair> load_training_slices(const DatasetManifest& m, const fs::path& base_dir);

/// Infer-mode predictions for `ids`, written as <pred_dir>/<id>_pet_dcnn.
void predict_subjects(UNet<float>& model, const DatasetManifest& m, const fs::path& base_dir,
                      const std::vector<std::string>& ids, const fs::path& pred_dir,
                      const ProgressFn& progress = {});

fs::path prediction_path(const fs::path& pred_dir, const std::string& id);

/// Metrics of the test subjects' predictions against their ASC references.
/// Throws ConfigError listing every test id without a prediction.
MetricsReport evaluate_predictions(const DatasetManifest& m, const fs::path& base_dir, const fs::path& pred_dir,
                                   bool whole_image = false);

}  // namespace ascnet
