#include "ascnet/io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ascnet/errors.hpp"
#include "json.hpp"

namespace ascnet {

using J = nlohmann::ordered_json;

namespace {

template <typename T>
void get_if(const J& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

J parse(const std::string& text, const std::string& what) {
  try {
    return J::parse(text);
  } catch (const J::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

std::string ellipse_compose(Compose c) { return c == Compose::Add ? "add" : "replace"; }

Compose compose_from(const std::string& s) {
  if (s == "add") return Compose::Add;
  if (s == "replace") return Compose::Replace;
  throw FormatError("unknown compose mode '" + s + "'");
}

J simulation_json(const SimulationRecord& r) {
  return {{"preset", r.preset},
          {"subjects", r.subjects},
          {"size", r.size},
          {"slices", r.slices},
          {"angles", r.angles},
          {"bins", r.bins},
          {"fov_mm", r.fov_mm},
          {"counts", r.counts},
          {"scatter_fraction", r.scatter_fraction},
          {"scatter_sigma_bins", r.scatter_sigma_bins},
          {"couch", r.couch},
          {"variability", r.variability},
          {"iterations", r.iterations},
          {"subsets", r.subsets},
          {"post_filter_fwhm_mm", r.post_filter_fwhm_mm},
          {"seed", r.seed}};
}

SimulationRecord simulation_from(const J& r, SimulationRecord s) {
  get_if(r, "preset", s.preset);
  get_if(r, "subjects", s.subjects);
  get_if(r, "size", s.size);
  get_if(r, "slices", s.slices);
  get_if(r, "angles", s.angles);
  get_if(r, "bins", s.bins);
  get_if(r, "fov_mm", s.fov_mm);
  get_if(r, "counts", s.counts);
  get_if(r, "scatter_fraction", s.scatter_fraction);
  get_if(r, "scatter_sigma_bins", s.scatter_sigma_bins);
  get_if(r, "couch", s.couch);
  get_if(r, "variability", s.variability);
  get_if(r, "iterations", s.iterations);
  get_if(r, "subsets", s.subsets);
  get_if(r, "post_filter_fwhm_mm", s.post_filter_fwhm_mm);
  get_if(r, "seed", s.seed);
  return s;
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("failed writing " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

fs::path payload_path(const fs::path& path) {
  fs::path p = path;
  if (p.extension() == ".json" || p.extension() == ".f32") p.replace_extension();
  return p.string() + ".f32";
}

fs::path sidecar_path(const fs::path& path) {
  fs::path p = path;
  if (p.extension() == ".json" || p.extension() == ".f32") p.replace_extension();
  return p.string() + ".json";
}

void write_raw_volume(const fs::path& path, const ImageVolume& v, const std::string& kind) {
  if (v.data.size() != static_cast<std::size_t>(v.slices) * v.height * v.width) {
    throw ShapeError("volume data does not match its shape");
  }
  std::string bytes(v.data.size() * 4, '\0');
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(v.data[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  write_text(payload_path(path), bytes);
  J j;
  j["shape"] = {v.slices, v.height, v.width};
  j["voxel_size_mm"] = {v.voxel_size_mm.z, v.voxel_size_mm.y, v.voxel_size_mm.x};
  j["units"] = std::string(to_string(v.units));
  j["kind"] = kind;
  j["dtype"] = "float32";
  j["byte_order"] = "little";
  write_text(sidecar_path(path), j.dump(2) + "\n");
}

RawVolume read_raw_volume(const fs::path& path) {
  const J j = parse(read_text(sidecar_path(path)), sidecar_path(path).string());
  RawVolume out;
  try {
    const auto shape = j.at("shape").get<std::vector<int>>();
    const auto vs = j.at("voxel_size_mm").get<std::vector<double>>();
    if (shape.size() != 3 || vs.size() != 3) throw FormatError("shape and voxel_size_mm need 3 entries");
    for (int d : shape) {
      if (d < 1) throw FormatError("shape entries must be >= 1");
    }
    for (double d : vs) {
      if (!(d > 0.0)) throw FormatError("voxel sizes must be > 0");
    }
    out.volume = ImageVolume(shape[0], shape[1], shape[2], {vs[0], vs[1], vs[2]},
                             units_from_string(j.at("units").get<std::string>()));
    out.kind = j.value("kind", "");
  } catch (const J::exception& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  } catch (const DomainError& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }
  const auto bytes = read_bytes(payload_path(path));
  if (bytes.size() != out.volume.data.size() * 4) {
    throw FormatError(payload_path(path).string() + ": expected " + std::to_string(out.volume.data.size() * 4) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < out.volume.data.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    out.volume.data[i] = std::bit_cast<float>(u);
  }
  return out;
}

std::string DatasetManifest::to_json() const {
  J j;
  j["schema_version"] = schema_version;
  J subs = J::array();
  for (const SubjectEntry& s : subjects) {
    subs.push_back({{"id", s.id},
                    {"nc_path", s.nc_path},
                    {"asc_path", s.asc_path},
                    {"dose_MBq", s.dose_MBq},
                    {"weight_g", s.weight_g},
                    {"duration_s", s.duration_s},
                    {"preset", s.preset},
                    {"seed", s.seed}});
  }
  j["subjects"] = subs;
  j["split"] = {{"train_ids", split.train_ids}, {"test_ids", split.test_ids}};
  j["simulation"] = simulation_json(simulation);
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  const J j = parse(text, "manifest");
  DatasetManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != 1) {
      throw FormatError("unsupported manifest schema_version " + std::to_string(m.schema_version));
    }
    for (const J& s : j.at("subjects")) {
      SubjectEntry e;
      e.id = s.at("id").get<std::string>();
      e.nc_path = s.at("nc_path").get<std::string>();
      e.asc_path = s.at("asc_path").get<std::string>();
      e.dose_MBq = s.at("dose_MBq").get<double>();
      e.weight_g = s.at("weight_g").get<double>();
      e.duration_s = s.at("duration_s").get<double>();
      e.preset = s.value("preset", "");
      e.seed = s.value("seed", std::uint64_t{0});
      m.subjects.push_back(e);
    }
    m.split.train_ids = j.at("split").at("train_ids").get<std::vector<std::string>>();
    m.split.test_ids = j.at("split").at("test_ids").get<std::vector<std::string>>();
    if (j.contains("simulation")) m.simulation = simulation_from(j.at("simulation"), m.simulation);
  } catch (const J::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

const SubjectEntry& DatasetManifest::subject(const std::string& id) const {
  for (const SubjectEntry& s : subjects) {
    if (s.id == id) return s;
  }
  throw ConfigError("unknown subject id '" + id + "'");
}

void DatasetManifest::validate(const fs::path* base_dir) const {
  std::set<std::string> ids;
  for (const SubjectEntry& s : subjects) {
    if (s.id.empty()) throw ConfigError("manifest has a subject with an empty id");
    if (!ids.insert(s.id).second) throw ConfigError("duplicate subject id '" + s.id + "'");
    if (!(s.dose_MBq > 0.0) || !(s.weight_g > 0.0) || !(s.duration_s > 0.0)) {
      throw ConfigError("subject '" + s.id + "': dose, weight and duration must be positive");
    }
    if (base_dir) {
      for (const std::string* p : {&s.nc_path, &s.asc_path}) {
        const fs::path full = *base_dir / *p;
        if (!fs::exists(payload_path(full)) || !fs::exists(sidecar_path(full))) {
          throw ConfigError("subject '" + s.id + "': missing volume " + full.string());
        }
      }
    }
  }
  std::set<std::string> train;
  for (const std::string& id : split.train_ids) {
    if (!ids.count(id)) throw ConfigError("split references unknown subject '" + id + "'");
    if (!train.insert(id).second) throw ConfigError("subject '" + id + "' listed twice in train_ids");
  }
  std::set<std::string> test;
  for (const std::string& id : split.test_ids) {
    if (!ids.count(id)) throw ConfigError("split references unknown subject '" + id + "'");
    if (train.count(id)) throw ConfigError("subject '" + id + "' is in both train_ids and test_ids");
    if (!test.insert(id).second) throw ConfigError("subject '" + id + "' listed twice in test_ids");
  }
}

DatasetManifest read_manifest(const fs::path& path) { return DatasetManifest::from_json(read_text(path)); }

void write_manifest(const fs::path& path, const DatasetManifest& m) { write_text(path, m.to_json()); }

Split default_split(const std::vector<std::string>& ids) {
  const std::size_t n = ids.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 25.0 / 35.0));
  const std::size_t n_test = n - n_train;
  // Round-robin: every k-th subject goes to test until the test quota is met.
  Split s;
  std::size_t placed_test = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // Test slot when the running test share falls behind the target ratio.
    const bool to_test = placed_test < n_test && (placed_test + 1) * n <= (i + 1) * n_test;
    if (to_test) {
      s.test_ids.push_back(ids[i]);
      ++placed_test;
    } else {
      s.train_ids.push_back(ids[i]);
    }
  }
  return s;
}

std::string phantom_to_json(const Phantom& p) {
  J j;
  J es = J::array();
  for (const Ellipse& e : p.ellipses) {
    es.push_back({{"center_xy", {e.cx, e.cy}},
                  {"semi_axes_xy", {e.ax, e.ay}},
                  {"angle", e.angle},
                  {"activity", e.activity},
                  {"mu", e.mu},
                  {"compose", ellipse_compose(e.compose)},
                  {"jitter", e.jitter}});
  }
  j["ellipses"] = es;
  if (p.couch) {
    j["couch"] = {{"x", {p.couch->x0, p.couch->x1}}, {"y", {p.couch->y0, p.couch->y1}}, {"mu", p.couch->mu}};
  } else {
    j["couch"] = nullptr;
  }
  j["subject_meta"] = {{"dose_MBq", p.meta.dose_MBq},
                       {"weight_g", p.meta.weight_g},
                       {"duration_s", p.meta.duration_s},
                       {"seed", p.meta.seed}};
  return j.dump(2) + "\n";
}

Phantom phantom_from_json(const std::string& text) {
  const J j = parse(text, "phantom");
  Phantom p;
  try {
    for (const J& e : j.at("ellipses")) {
      Ellipse el;
      el.cx = e.at("center_xy").at(0).get<double>();
      el.cy = e.at("center_xy").at(1).get<double>();
      el.ax = e.at("semi_axes_xy").at(0).get<double>();
      el.ay = e.at("semi_axes_xy").at(1).get<double>();
      el.angle = e.at("angle").get<double>();
      el.activity = e.at("activity").get<double>();
      el.mu = e.at("mu").get<double>();
      el.compose = compose_from(e.at("compose").get<std::string>());
      el.jitter = e.value("jitter", false);
      if (!(el.ax > 0.0) || !(el.ay > 0.0) || !(el.activity >= 0.0) || !(el.mu >= 0.0) ||
          !std::isfinite(el.activity) || !std::isfinite(el.mu)) {
        throw FormatError("phantom ellipse violates its invariants");
      }
      p.ellipses.push_back(el);
    }
    if (j.contains("couch") && !j.at("couch").is_null()) {
      const J& c = j.at("couch");
      Couch couch;
      couch.x0 = c.at("x").at(0).get<double>();
      couch.x1 = c.at("x").at(1).get<double>();
      couch.y0 = c.at("y").at(0).get<double>();
      couch.y1 = c.at("y").at(1).get<double>();
      couch.mu = c.at("mu").get<double>();
      p.couch = couch;
    }
    const J& m = j.at("subject_meta");
    p.meta.dose_MBq = m.at("dose_MBq").get<double>();
    p.meta.weight_g = m.at("weight_g").get<double>();
    p.meta.duration_s = m.at("duration_s").get<double>();
    p.meta.seed = m.at("seed").get<std::uint64_t>();
  } catch (const J::exception& e) {
    throw FormatError(std::string("phantom: ") + e.what());
  }
  return p;
}

std::string simulation_record_to_json(const SimulationRecord& r) { return simulation_json(r).dump(2) + "\n"; }

SimulationRecord simulation_record_from_json(const std::string& text, SimulationRecord base) {
  const J j = parse(text, "simulation config");
  try {
    return simulation_from(j, base);
  } catch (const J::exception& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
}

std::string train_config_to_json(const TrainConfig& c) {
  J j;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["plateau_epochs"] = c.plateau_epochs;
  j["lr_floor"] = c.lr_floor;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["rmsprop"] = {{"rho", c.rmsprop_rho}, {"eps", c.rmsprop_eps}};
  j["augment"] = {{"enabled", c.augment.enabled},
                  {"rot_deg", c.augment.rot_deg},
                  {"hflip_p", c.augment.hflip_p},
                  {"vshift_frac", c.augment.vshift_frac}};
  j["model"] = {{"base_channels", c.model.base_channels},
                {"stages", c.model.stages},
                {"in_channels", c.model.in_channels},
                {"out_channels", c.model.out_channels},
                {"final_activation", std::string(to_string(c.model.final_activation))}};
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig c) {
  const J j = parse(text, "train config");
  try {
    get_if(j, "batch_size", c.batch_size);
    get_if(j, "learning_rate", c.learning_rate);
    get_if(j, "plateau_epochs", c.plateau_epochs);
    get_if(j, "lr_floor", c.lr_floor);
    get_if(j, "max_epochs", c.max_epochs);
    get_if(j, "seed", c.seed);
    if (j.contains("rmsprop")) {
      get_if(j.at("rmsprop"), "rho", c.rmsprop_rho);
      get_if(j.at("rmsprop"), "eps", c.rmsprop_eps);
    }
    if (j.contains("augment")) {
      const J& a = j.at("augment");
      get_if(a, "enabled", c.augment.enabled);
      get_if(a, "rot_deg", c.augment.rot_deg);
      get_if(a, "hflip_p", c.augment.hflip_p);
      get_if(a, "vshift_frac", c.augment.vshift_frac);
    }
    if (j.contains("model")) {
      const J& m = j.at("model");
      get_if(m, "base_channels", c.model.base_channels);
      get_if(m, "stages", c.model.stages);
      get_if(m, "in_channels", c.model.in_channels);
      get_if(m, "out_channels", c.model.out_channels);
      if (m.contains("final_activation")) {
        c.model.final_activation = final_activation_from_string(m.at("final_activation").get<std::string>());
      }
    }
  } catch (const J::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace ascnet
