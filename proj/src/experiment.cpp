#include "ascnet/experiment.hpp"

#include <cstdio>

#include "ascnet/errors.hpp"
#include "ascnet/rng.hpp"

namespace ascnet {

namespace {

std::string subject_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sub%03d", i);
  return buf;
}

ImageVolume to_bq(const ImageVolume& v) {
  ImageVolume out = v;
  out.units = Units::BqPerMl;
  for (float& x : out.data) x *= 1000.0f;
  return out;
}

}  // namespace

SimulationConfig simulation_config(const SimulationRecord& r) {
  SimulationConfig c;
  c.grid = {r.size, r.size, r.fov_mm};
  c.n_slices = r.slices;
  c.n_angles = r.angles;
  c.n_bins = r.bins;
  c.recon.iterations = r.iterations;
  c.recon.subsets = r.subsets;
  c.recon.post_filter_fwhm_mm = r.post_filter_fwhm_mm;
  c.scatter.scatter_fraction = r.scatter_fraction;
  c.scatter.kernel_sigma_bins = r.scatter_sigma_bins;
  c.counts = r.counts;
  c.with_couch = r.couch;
  return c;
}

DatasetManifest simulate_dataset(const SimulationRecord& r, const fs::path& out_dir, const ProgressFn& progress) {
  if (r.subjects < 1) throw ConfigError("need at least one subject");
  if (r.size < 8 || r.slices < 1) throw ConfigError("grid must be at least 8x8 with one slice");
  const Preset preset = preset_from_string(r.preset);
  const SimulationConfig sim = simulation_config(r);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.simulation = r;
  std::vector<std::string> ids;
  for (int i = 0; i < r.subjects; ++i) {
    const std::string id = subject_id(i);
    const std::uint64_t seed = derive_seed(r.seed, {static_cast<std::uint64_t>(i)});
    const Phantom ph = make_phantom(preset, seed, r.variability);
    const SubjectImages img = simulate_subject(ph, sim, derive_seed(seed, {0x6e6f697365}));

    SubjectEntry e;
    e.id = id;
    e.nc_path = id + "_pet_nc.f32";
    e.asc_path = id + "_pet_asc.f32";
    e.dose_MBq = ph.meta.dose_MBq;
    e.weight_g = ph.meta.weight_g;
    e.duration_s = ph.meta.duration_s;
    e.preset = r.preset;
    e.seed = seed;
    write_raw_volume(out_dir / e.nc_path, to_bq(img.pet_nc), "pet_nc");
    write_raw_volume(out_dir / e.asc_path, to_bq(img.pet_asc), "pet_asc");
    write_text(out_dir / (id + "_phantom.json"), phantom_to_json(ph));
    m.subjects.push_back(e);
    ids.push_back(id);
    if (progress) progress("simulated " + id);
  }
  m.split = default_split(ids);
  m.validate(&out_dir);
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

std::vector<SlicePair> load_training_slices(const DatasetManifest& m, const fs::path& base_dir) {
  m.validate(&base_dir);
  if (m.split.train_ids.empty()) throw ConfigError("manifest has no training subjects");
  std::vector<SlicePair> out;
  int index = 0;
  for (const std::string& id : m.split.train_ids) {
    const SubjectEntry& s = m.subject(id);
    const RawVolume nc = read_raw_volume(base_dir / s.nc_path);
    const RawVolume asc = read_raw_volume(base_dir / s.asc_path);
    auto pairs = preprocess_pair(nc.volume, asc.volume, index++);
    out.insert(out.end(), std::make_move_iterator(pairs.begin()), std::make_move_iterator(pairs.end()));
  }
  return out;
}

fs::path prediction_path(const fs::path& pred_dir, const std::string& id) {
  return pred_dir / (id + "_pet_dcnn.f32");
}

void predict_subjects(UNet<float>& model, const DatasetManifest& m, const fs::path& base_dir,
                      const std::vector<std::string>& ids, const fs::path& pred_dir, const ProgressFn& progress) {
  std::error_code ec;
  fs::create_directories(pred_dir, ec);
  if (ec) throw IoError("cannot create " + pred_dir.string() + ": " + ec.message());
  for (const std::string& id : ids) {
    const RawVolume nc = read_raw_volume(base_dir / m.subject(id).nc_path);
    write_raw_volume(prediction_path(pred_dir, id), predict(model, nc.volume), "pet_dcnn");
    if (progress) progress("predicted " + id);
  }
}

MetricsReport evaluate_predictions(const DatasetManifest& m, const fs::path& base_dir, const fs::path& pred_dir,
                                   bool whole_image) {
  m.validate(&base_dir);
  if (m.split.test_ids.empty()) throw ConfigError("manifest has no test subjects");
  std::string missing;
  for (const std::string& id : m.split.test_ids) {
    const fs::path p = prediction_path(pred_dir, id);
    if (!fs::exists(payload_path(p)) || !fs::exists(sidecar_path(p))) missing += (missing.empty() ? "" : ", ") + id;
  }
  if (!missing.empty()) throw ConfigError("missing predictions for: " + missing);

  std::vector<SubjectInput> inputs;
  for (const std::string& id : m.split.test_ids) {
    const SubjectEntry& s = m.subject(id);
    SubjectInput in;
    in.id = id;
    in.pred = to_kbq(read_raw_volume(prediction_path(pred_dir, id)).volume);
    in.ref = to_kbq(read_raw_volume(base_dir / s.asc_path).volume);
    in.dose_MBq = s.dose_MBq;
    in.weight_g = s.weight_g;
    inputs.push_back(std::move(in));
  }
  return evaluate(inputs, whole_image);
}

}  // namespace ascnet
