#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "ascnet/errors.hpp"
#include "ascnet/eval.hpp"
#include "ascnet/experiment.hpp"
#include "ascnet/gradcheck.hpp"
#include "ascnet/io.hpp"
#include "ascnet/phantom.hpp"
#include "ascnet/projector.hpp"
#include "ascnet/recon.hpp"
#include "ascnet/unet.hpp"
#include "cli.hpp"

namespace py = pybind11;
using namespace ascnet;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

F32 to_numpy(const Image2D& img) {
  F32 out({img.height, img.width});
  std::memcpy(out.mutable_data(), img.data.data(), img.data.size() * sizeof(float));
  return out;
}

F32 to_numpy(const ImageVolume& v) {
  F32 out({v.slices, v.height, v.width});
  std::memcpy(out.mutable_data(), v.data.data(), v.data.size() * sizeof(float));
  return out;
}

F32 to_numpy(const Sinogram& s) {
  F32 out({s.n_angles, s.n_bins});
  std::memcpy(out.mutable_data(), s.data.data(), s.data.size() * sizeof(float));
  return out;
}

Image2D image_from(const F32& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  Image2D img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::memcpy(img.data.data(), a.data(), img.data.size() * sizeof(float));
  return img;
}

Sinogram sino_from(const F32& a, SinoKind kind) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D (angles, bins) array");
  Sinogram s(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), kind);
  std::memcpy(s.data.data(), a.data(), s.data.size() * sizeof(float));
  return s;
}

// 2-D input is treated as a single slice.
ImageVolume volume_from(const F32& a, Units units, double voxel_mm = 4.0) {
  if (a.ndim() != 3 && a.ndim() != 2) throw ShapeError("expected a 2-D or 3-D array");
  const int s = a.ndim() == 3 ? static_cast<int>(a.shape(0)) : 1;
  const int h = static_cast<int>(a.shape(a.ndim() - 2)), w = static_cast<int>(a.shape(a.ndim() - 1));
  ImageVolume v(s, h, w, {voxel_mm, voxel_mm, voxel_mm}, units);
  std::memcpy(v.data.data(), a.data(), v.data.size() * sizeof(float));
  return v;
}

Geometry geometry(int size, int n_angles, int n_bins, double fov_mm) {
  return make_geometry(Grid{size, size, fov_mm}, n_angles, n_bins);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Image-space PET attenuation and scatter correction: simulation, network and metrics";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<Phantom>(m, "Phantom")
      .def("to_json", [](const Phantom& p) { return phantom_to_json(p); })
      .def_static("from_json", &phantom_from_json)
      .def_property_readonly("n_ellipses", [](const Phantom& p) { return p.ellipses.size(); })
      .def_property_readonly("has_couch", [](const Phantom& p) { return p.couch.has_value(); })
      .def_property_readonly("dose_MBq", [](const Phantom& p) { return p.meta.dose_MBq; })
      .def_property_readonly("weight_g", [](const Phantom& p) { return p.meta.weight_g; });

  m.def(
      "make_phantom",
      [](const std::string& preset, std::uint64_t seed, double variability) {
        return make_phantom(preset_from_string(preset), seed, variability);
      },
      py::arg("preset") = "brain", py::arg("seed") = 1, py::arg("variability") = 1.0);

  m.def(
      "rasterize",
      [](const Phantom& p, int size, int slices, bool couch, double fov_mm) {
        const RasterizedPhantom r = rasterize(p, Grid{size, size, fov_mm}, slices, couch);
        return py::make_tuple(to_numpy(r.activity), to_numpy(r.mu));
      },
      py::arg("phantom"), py::arg("size") = 64, py::arg("slices") = 16, py::arg("couch") = true,
      py::arg("fov_mm") = 256.0, "Returns (activity kBq/mL, mu 1/cm) arrays of shape (slices, size, size).");

  m.def(
      "forward_project",
      [](const F32& image, int n_angles, int n_bins, double fov_mm) {
        const Image2D img = image_from(image);
        if (img.height != img.width) throw ShapeError("image must be square");
        return to_numpy(forward_project(img, geometry(img.width, n_angles, n_bins, fov_mm)));
      },
      py::arg("image"), py::arg("n_angles") = 48, py::arg("n_bins") = 96, py::arg("fov_mm") = 256.0);

  m.def(
      "back_project",
      [](const F32& sino, int size, double fov_mm) {
        const Sinogram s = sino_from(sino, SinoKind::Counts);
        return to_numpy(back_project(s, geometry(size, s.n_angles, s.n_bins, fov_mm), size, size));
      },
      py::arg("sinogram"), py::arg("size") = 64, py::arg("fov_mm") = 256.0);

  m.def(
      "attenuation_factors",
      [](const F32& mu, int n_angles, int n_bins, double fov_mm) {
        const Image2D img = image_from(mu);
        return to_numpy(attenuation_factors(img, geometry(img.width, n_angles, n_bins, fov_mm)));
      },
      py::arg("mu"), py::arg("n_angles") = 48, py::arg("n_bins") = 96, py::arg("fov_mm") = 256.0);

  m.def(
      "osem",
      [](const F32& prompts, const F32& acf, const py::object& scatter, int size, int iterations, int subsets,
         bool asc, double post_filter_fwhm_mm, double fov_mm) {
        const Sinogram p = sino_from(prompts, SinoKind::Counts);
        const Sinogram a = sino_from(acf, SinoKind::Acf);
        const Sinogram s = scatter.is_none() ? Sinogram(p.n_angles, p.n_bins, SinoKind::Scatter)
                                             : sino_from(scatter.cast<F32>(), SinoKind::Scatter);
        ReconConfig cfg;
        cfg.iterations = iterations;
        cfg.subsets = subsets;
        cfg.mode = asc ? ReconMode::ASC : ReconMode::NC;
        cfg.post_filter_fwhm_mm = post_filter_fwhm_mm;
        return to_numpy(osem(p, a, s, geometry(size, p.n_angles, p.n_bins, fov_mm), cfg, size, size));
      },
      py::arg("prompts"), py::arg("acf"), py::arg("scatter") = py::none(), py::arg("size") = 64,
      py::arg("iterations") = 4, py::arg("subsets") = 8, py::arg("asc") = true, py::arg("post_filter_fwhm_mm") = 0.0,
      py::arg("fov_mm") = 256.0);

  m.def(
      "simulate_subject",
      [](const Phantom& p, int size, int slices, double counts, double scatter_fraction, bool couch,
         std::uint64_t seed) {
        SimulationRecord r;
        r.size = size;
        r.slices = slices;
        r.counts = counts;
        r.scatter_fraction = scatter_fraction;
        r.couch = couch;
        const SubjectImages img = simulate_subject(p, simulation_config(r), seed);
        return py::make_tuple(to_numpy(img.pet_nc), to_numpy(img.pet_asc));
      },
      py::arg("phantom"), py::arg("size") = 64, py::arg("slices") = 16, py::arg("counts") = 2.0e6,
      py::arg("scatter_fraction") = 0.3, py::arg("couch") = true, py::arg("seed") = 1,
      "Returns (pet_nc, pet_asc) in kBq/mL.");

  // Metrics. Volumes are float arrays of shape (slices, H, W) or (H, W).
  m.def(
      "body_mask",
      [](const F32& ref) {
        const BodyMask mk = body_mask(volume_from(ref, Units::kBqPerMl));
        py::array_t<bool> out({mk.slices, mk.height, mk.width});
        std::copy(mk.data.begin(), mk.data.end(), out.mutable_data());
        return out;
      },
      py::arg("reference"));
  auto mask_for = [](const ImageVolume& ref, bool whole_image) { return whole_image ? full_mask(ref) : body_mask(ref); };
  m.def(
      "nrmse",
      [mask_for](const F32& pred, const F32& ref, bool whole_image) {
        const ImageVolume r = volume_from(ref, Units::kBqPerMl);
        return nrmse(volume_from(pred, Units::kBqPerMl), r, mask_for(r, whole_image));
      },
      py::arg("pred"), py::arg("ref"), py::arg("whole_image") = false);
  m.def(
      "psnr",
      [mask_for](const F32& pred, const F32& ref, bool whole_image) {
        const ImageVolume r = volume_from(ref, Units::kBqPerMl);
        return psnr(volume_from(pred, Units::kBqPerMl), r, mask_for(r, whole_image));
      },
      py::arg("pred"), py::arg("ref"), py::arg("whole_image") = false);
  m.def(
      "ssim",
      [](const F32& pred, const F32& ref) {
        return ssim(volume_from(pred, Units::kBqPerMl), volume_from(ref, Units::kBqPerMl));
      },
      py::arg("pred"), py::arg("ref"));
  m.def("suv", py::overload_cast<double, double, double>(&suv), py::arg("uptake_MBq_per_ml"), py::arg("dose_MBq"),
        py::arg("weight_g"));
  m.def(
      "joint_histogram",
      [](const F32& pred, const F32& ref, double lo, double hi, int bins) {
        const JointHistogram h = joint_histogram(std::span<const float>(pred.data(), pred.size()),
                                                 std::span<const float>(ref.data(), ref.size()), lo, hi, bins);
        py::array_t<std::uint64_t> counts({h.bins, h.bins});
        std::copy(h.counts.begin(), h.counts.end(), counts.mutable_data());
        py::dict d;
        d["slope"] = h.slope;
        d["r2"] = h.r2;
        d["pairs"] = h.pairs;
        d["counts"] = counts;
        return d;
      },
      py::arg("pred_suv"), py::arg("ref_suv"), py::arg("lo") = 0.5, py::arg("hi") = 20.0, py::arg("bins") = 100);
  m.def(
      "stratify_by_psnr",
      [](const std::vector<double>& p) {
        const PsnrGroups g = stratify_by_psnr(p);
        return py::make_tuple(g.g1, g.g2, g.g3);
      },
      py::arg("psnr_db"));

  py::class_<UNet<float>>(m, "UNet")
      .def(py::init([](int base_channels, int stages, const std::string& final_activation, std::uint64_t seed) {
             UNetConfig cfg;
             cfg.base_channels = base_channels;
             cfg.stages = stages;
             cfg.final_activation = final_activation_from_string(final_activation);
             return UNet<float>(cfg, seed);
           }),
           py::arg("base_channels") = 16, py::arg("stages") = 5, py::arg("final_activation") = "relu",
           py::arg("seed") = 1)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const UNet<float>& u, const fs::path& p) { save_checkpoint(u, p); }, py::arg("path"))
      .def("parameter_count", &UNet<float>::parameter_count)
      .def(
          "predict",
          [](UNet<float>& u, const F32& nc_bq) {
            // Input in Bq/mL as stored on disk; output in kBq/mL.
            return to_numpy(predict(u, volume_from(nc_bq, Units::BqPerMl)));
          },
          py::arg("nc_bq_per_ml"), "Slice-wise inference; input Bq/mL, output kBq/mL.");

  m.def("expected_parameter_count", [](int base_channels, int stages) {
    UNetConfig cfg;
    cfg.base_channels = base_channels;
    cfg.stages = stages;
    return expected_parameter_count(cfg);
  });

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        GradCheckOptions opt;
        opt.seed = seed;
        py::list rows;
        for (const GradCheckRow& r : run_gradcheck(opt)) {
          rows.append(py::make_tuple(r.name, r.max_rel_error, r.checked, r.pass));
        }
        return rows;
      },
      py::arg("seed") = 1, "List of (layer, max_rel_error, checked, pass).");

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return run_cli(args); }, py::arg("args"),
      "Runs the command-line tool in-process; returns its exit code.");
}
