#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ascnet/io.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace ascnet;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("ascnet_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& rel) const { return (path / rel).string(); }
};

int cli(std::vector<std::string> args) { return run_cli(args); }

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

int simulate(const TempDir& d, const std::string& out, int subjects = 2) {
  return cli({"--deterministic", "simulate", "--subjects", std::to_string(subjects), "--size", "32", "--slices", "2",
              "--counts", "5e5", "--seed", "3", "--out", d / out});
}

int train(const TempDir& d, const std::string& data, const std::string& out) {
  return cli({"--deterministic", "train", "--manifest", d / (data + "/manifest.json"), "--out", d / out, "--epochs",
              "3", "--batch-size", "2", "--seed", "5"});
}

}  // namespace

TEST_CASE("simulate, train, predict and evaluate end to end") {
  TempDir d("e2e");
  REQUIRE(simulate(d, "data", 3) == 0);
  const DatasetManifest m = read_manifest(d / "data/manifest.json");
  CHECK(m.subjects.size() == 3);
  CHECK(m.split.train_ids.size() == 2);
  CHECK(fs::exists(d / "data/effective_config.json"));

  REQUIRE(train(d, "data", "model/m.ckpt") == 0);
  const auto hist = lines(d / "model/m.ckpt.history.jsonl");
  CHECK(hist.size() == 3);
  CHECK(hist[0].find("wall_seconds") == std::string::npos);
  const auto cfg = nlohmann::json::parse(read_text(d / "model/effective_config.json"));
  CHECK(cfg["max_epochs"] == 3);
  CHECK(cfg["batch_size"] == 2);
  CHECK(cfg["learning_rate"] == 0.001);

  REQUIRE(cli({"predict", "--model", d / "model/m.ckpt", "--manifest", d / "data/manifest.json", "--out-dir",
               d / "pred"}) == 0);
  const std::string test_id = m.split.test_ids[0];
  const RawVolume pred = read_raw_volume(d / ("pred/" + test_id + "_pet_dcnn"));
  const RawVolume nc = read_raw_volume(d.path / "data" / m.subject(test_id).nc_path);
  CHECK(pred.volume.slices == nc.volume.slices);
  CHECK(pred.volume.height == nc.volume.height);
  CHECK(pred.volume.width == nc.volume.width);
  CHECK(pred.volume.units == Units::kBqPerMl);
  CHECK(pred.kind == "pet_dcnn");

  // Single-volume mode agrees with manifest mode and is repeatable.
  const std::string nc_path = d / ("data/" + m.subject(test_id).nc_path);
  REQUIRE(cli({"predict", "--model", d / "model/m.ckpt", "--in", nc_path, "--out", d / "single/a.f32"}) == 0);
  REQUIRE(cli({"predict", "--model", d / "model/m.ckpt", "--in", nc_path, "--out", d / "single/b.f32"}) == 0);
  CHECK(read_bytes(d / "single/a.f32") == read_bytes(d / "single/b.f32"));
  CHECK(read_bytes(d / "single/a.f32") == read_bytes(d / ("pred/" + test_id + "_pet_dcnn.f32")));

  // Reference against itself.
  fs::create_directories(d.path / "self");
  for (const auto& id : m.split.test_ids) {
    fs::copy_file(d / ("data/" + m.subject(id).asc_path), d / ("self/" + id + "_pet_dcnn.f32"));
    fs::copy_file(d / ("data/" + id + "_pet_asc.json"), d / ("self/" + id + "_pet_dcnn.json"));
  }
  REQUIRE(cli({"evaluate", "--manifest", d / "data/manifest.json", "--pred", d / "self", "--report",
               d / "eval/report.json", "--hist", d / "eval/hist.pgm"}) == 0);
  const auto rep = nlohmann::json::parse(read_text(d / "eval/report.json"));
  CHECK(rep["subjects"].size() == m.split.test_ids.size());
  CHECK(rep["subjects"][0]["nrmse"] == 0.0);
  CHECK(rep["subjects"][0]["ssim"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep["subjects"][0]["psnr_db"] == "inf");
  CHECK(std::abs(rep["joint_histogram"]["slope"].get<double>() - 1.0) < 1e-9);
  CHECK(std::abs(rep["joint_histogram"]["r2"].get<double>() - 1.0) < 1e-9);
  std::size_t grouped = 0;
  for (const char* g : {"G1", "G2", "G3"}) grouped += rep["groups"][g].size();
  CHECK(grouped == m.split.test_ids.size());
  CHECK(fs::exists(d / "eval/hist.pgm"));
  CHECK(fs::exists(d / "eval/effective_config.json"));
}

TEST_CASE("deterministic reruns are byte identical") {
  TempDir d("det");
  REQUIRE(simulate(d, "a") == 0);
  REQUIRE(simulate(d, "b") == 0);
  for (const auto& e : fs::directory_iterator(d.path / "a")) {
    CHECK(read_bytes(e.path()) == read_bytes(d.path / "b" / e.path().filename()));
  }
  REQUIRE(train(d, "a", "ma/m.ckpt") == 0);
  REQUIRE(train(d, "a", "mb/m.ckpt") == 0);
  CHECK(read_bytes(d / "ma/m.ckpt") == read_bytes(d / "mb/m.ckpt"));
  CHECK(read_bytes(d / "ma/m.ckpt.history.jsonl") == read_bytes(d / "mb/m.ckpt.history.jsonl"));
}

TEST_CASE("config precedence: flags over file over defaults") {
  TempDir d("cfg");
  REQUIRE(simulate(d, "data") == 0);
  {
    std::ofstream f(d / "train.json");
    f << R"({"max_epochs": 2, "batch_size": 3, "learning_rate": 0.002})";
  }
  REQUIRE(cli({"--deterministic", "train", "--manifest", d / "data/manifest.json", "--config", d / "train.json",
               "--batch-size", "2", "--out", d / "m/m.ckpt"}) == 0);
  const auto cfg = nlohmann::json::parse(read_text(d / "m/effective_config.json"));
  CHECK(cfg["max_epochs"] == 2);         // file
  CHECK(cfg["batch_size"] == 2);         // flag
  CHECK(cfg["learning_rate"] == 0.002);  // file
  CHECK(cfg["plateau_epochs"] == 10);    // default
  CHECK(lines(d / "m/m.ckpt.history.jsonl").size() == 2);
}

TEST_CASE("exit codes") {
  TempDir d("codes");
  CHECK(cli({}) == 2);
  CHECK(cli({"bogus"}) == 2);
  CHECK(cli({"simulate", "--subjects", "0", "--out", d / "x"}) == 2);
  CHECK(cli({"train", "--manifest", d / "missing.json", "--out", d / "m"}) == 2);
  CHECK(cli({"--help"}) == 0);

  REQUIRE(simulate(d, "data") == 0);
  // Overlapping split is rejected before training starts.
  auto j = nlohmann::ordered_json::parse(read_text(d / "data/manifest.json"));
  j["split"]["test_ids"].push_back(j["split"]["train_ids"][0]);
  write_text(d / "data/overlap.json", j.dump(2));
  CHECK(cli({"train", "--manifest", d / "data/overlap.json", "--out", d / "m/m.ckpt", "--epochs", "1"}) == 2);
  CHECK_FALSE(fs::exists(d / "m/m.ckpt"));

  // Missing volume: validation error.
  fs::copy_file(d / "data/manifest.json", d / "data/copy.json");
  const DatasetManifest m = read_manifest(d / "data/manifest.json");
  fs::rename(d / ("data/" + m.subjects[0].asc_path), d / "data/moved.f32");
  CHECK(cli({"train", "--manifest", d / "data/copy.json", "--out", d / "m/m.ckpt", "--epochs", "1"}) == 2);
  fs::rename(d / "data/moved.f32", d / ("data/" + m.subjects[0].asc_path));

  // Malformed manifest and missing checkpoint: runtime errors.
  write_text(d / "data/broken.json", "{not json");
  CHECK(cli({"train", "--manifest", d / "data/broken.json", "--out", d / "m/m.ckpt"}) == 1);
  CHECK(cli({"predict", "--model", d / "nope.ckpt", "--in", d / "data/x.f32", "--out", d / "p.f32"}) == 1);
  CHECK(cli({"evaluate", "--manifest", d / "data/manifest.json", "--pred", d / "nopred", "--report",
             d / "r.json"}) == 2);
}
