#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dosepred/beamsim.hpp"
#include "dosepred/dvh.hpp"
#include "dosepred/error.hpp"
#include "dosepred/gradcheck.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/preprocess.hpp"
#include "dosepred/score.hpp"
#include "dosepred/trainer.hpp"

namespace py = pybind11;
using namespace dosepred;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// numpy arrays are indexed [z, y, x]; grid storage is x-fastest, so the
// buffers coincide.
Array to_numpy(const Grid3& g) {
  const Index3 d = g.dims();
  Array a({d[2], d[1], d[0]});
  std::copy(g.values().begin(), g.values().end(), a.mutable_data());
  return a;
}

Grid3 from_numpy(const Array& a, const Vec3& spacing, const Vec3& origin) {
  if (a.ndim() != 3) throw py::value_error("expected a 3-d array indexed [z, y, x]");
  const Geometry g{{static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))},
                   spacing,
                   origin};
  return Grid3(g, std::vector<double>(a.data(), a.data() + a.size()));
}

StructureSet structures_from(const py::dict& masks) {
  StructureSet s;
  bool first = true;
  for (const auto& [k, v] : masks) {
    const Grid3& m = v.cast<const Grid3&>();
    if (first) s = StructureSet(m.geometry());
    first = false;
    s.set(k.cast<std::string>(), m);
  }
  if (first) throw py::value_error("no structures given");
  return s;
}

py::dict structures_to(const StructureSet& s) {
  py::dict d;
  for (const auto& [name, m] : s.entries()) d[py::str(name)] = m;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Volumetric dose prediction core";

  static py::exception<Error> error(m, "DosepredError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      static const char* kinds[] = {"validation", "numeric", "io"};
      const std::string msg = std::string(kinds[static_cast<int>(e.kind())]) + ": " + e.what();
      PyErr_SetString(error.ptr(), msg.c_str());
    }
  });

  py::class_<Geometry>(m, "Geometry")
      .def(py::init([](Index3 dims, Vec3 spacing, Vec3 origin) {
             Geometry g{dims, spacing, origin};
             g.validate();
             return g;
           }),
           py::arg("dims"), py::arg("spacing") = Vec3{1, 1, 1}, py::arg("origin") = Vec3{0, 0, 0})
      .def_readonly("dims", &Geometry::dims)
      .def_readonly("spacing", &Geometry::spacing)
      .def_readonly("origin", &Geometry::origin)
      .def("position", &Geometry::position)
      .def("__eq__", [](const Geometry& a, const Geometry& b) { return a == b; })
      .def("__repr__", [](const Geometry& g) { return "Geometry(" + describe(g) + ")"; });

  py::class_<Grid3>(m, "Grid3")
      .def(py::init<const Geometry&, double>(), py::arg("geometry"), py::arg("fill") = 0.0)
      .def_static("from_numpy", &from_numpy, py::arg("array"), py::arg("spacing") = Vec3{1, 1, 1},
                  py::arg("origin") = Vec3{0, 0, 0})
      .def("numpy", &to_numpy)
      .def_property_readonly("geometry", &Grid3::geometry)
      .def_property_readonly("dims", &Grid3::dims)
      .def("sample", &Grid3::sample)
      .def("__len__", &Grid3::size)
      .def("__eq__", [](const Grid3& a, const Grid3& b) { return a == b; });

  m.def("read_g3", &read_g3, py::arg("path"));
  m.def("write_g3", &write_g3, py::arg("path"), py::arg("grid"));

  // preprocessing
  m.def("clip_rescale_ct", &clip_rescale_ct, py::arg("ct"));
  m.def("clip_dose", &clip_dose, py::arg("dose"), py::arg("lo") = 0.0, py::arg("hi") = 70.0);
  m.def(
      "normalize_ptv_mean",
      [](const Grid3& dose, const Grid3& ptv, double rx) {
        NormalizedDose n = normalize_ptv_mean(dose, ptv, rx);
        return py::make_tuple(n.dose, n.scale);
      },
      py::arg("dose"), py::arg("ptv"), py::arg("prescription") = 60.0);
  m.def("override_ptv_dose", &override_ptv_dose, py::arg("dose"), py::arg("ptv"),
        py::arg("prescription") = 60.0);
  m.def("resample", &resample, py::arg("src"), py::arg("target"));

  // dvh and losses
  m.def("exact_volume_at_dose", &exact_volume_at_dose, py::arg("dose"), py::arg("mask"),
        py::arg("threshold"), py::arg("structure") = "mask");
  m.def("soft_volume_at_dose", &soft_volume_at_dose, py::arg("dose"), py::arg("mask"),
        py::arg("threshold"), py::arg("beta"), py::arg("structure") = "mask");
  m.def("dose_at_volume", &dose_at_volume, py::arg("dose"), py::arg("mask"), py::arg("percent"),
        py::arg("structure") = "mask");
  m.def("volume_at_dose_pct", &volume_at_dose_pct, py::arg("dose"), py::arg("mask"),
        py::arg("threshold_gy"), py::arg("structure") = "mask");
  m.def("mae_loss", &mae_loss, py::arg("pred"), py::arg("real"));
  m.def("mae_grad", &mae_grad, py::arg("pred"), py::arg("real"));
  const auto dvh_cfg = [](const py::dict& s, std::optional<std::vector<double>> thresholds, double beta) {
    DvhConfig cfg = DvhConfig::standard();
    if (thresholds) cfg.thresholds = *thresholds;
    cfg.beta = beta;
    cfg.structures.clear();
    for (const auto& [k, v] : s) cfg.structures.push_back(k.cast<std::string>());
    return cfg;
  };
  m.def(
      "dvh_loss",
      [dvh_cfg](const Grid3& pred, const Grid3& real, const py::dict& s,
                std::optional<std::vector<double>> thresholds, double beta) {
        return dvh_loss(pred, real, structures_from(s), dvh_cfg(s, thresholds, beta));
      },
      py::arg("pred"), py::arg("real"), py::arg("structures"), py::arg("thresholds") = py::none(),
      py::arg("beta") = 1.0);
  m.def(
      "dvh_loss_grad",
      [dvh_cfg](const Grid3& pred, const Grid3& real, const py::dict& s,
                std::optional<std::vector<double>> thresholds, double beta) {
        return dvh_loss_grad(pred, real, structures_from(s), dvh_cfg(s, thresholds, beta));
      },
      py::arg("pred"), py::arg("real"), py::arg("structures"), py::arg("thresholds") = py::none(),
      py::arg("beta") = 1.0);

  // scoring
  m.def(
      "dose_score", [](const Grid3& p, const Grid3& r, const Grid3* body) { return dose_score(p, r, body); },
      py::arg("pred"), py::arg("real"), py::arg("body") = nullptr);
  m.def(
      "dvh_score", [](const Grid3& p, const Grid3& r, const py::dict& s) { return dvh_score(p, r, structures_from(s)); },
      py::arg("pred"), py::arg("real"), py::arg("structures"));
  m.def(
      "clinical_table",
      [](const Grid3& p, const Grid3& r, const py::dict& s, double rx) {
        py::list rows;
        for (const auto& c : clinical_table(p, r, structures_from(s), rx)) {
          py::dict d;
          d["structure"] = c.structure;
          d["metric"] = c.metric;
          d["unit"] = c.unit;
          d["present"] = c.present;
          if (c.present) {
            d["real"] = c.real;
            d["pred"] = c.pred;
            d["error"] = c.error;
          }
          rows.append(d);
        }
        return rows;
      },
      py::arg("pred"), py::arg("real"), py::arg("structures"), py::arg("prescription") = 60.0);

  // beam channel and phantoms
  m.def("hu_to_density", py::overload_cast<double>(&hu_to_density), py::arg("hu"));
  m.def(
      "beam_dose",
      [](const Grid3& ct, const Grid3& ptv, std::vector<double> angles, Vec3 iso, double sad) {
        BeamSpec spec;
        spec.angles_deg = std::move(angles);
        spec.isocenter = iso;
        spec.sad_mm = sad;
        return beam_dose(ct, ptv, spec);
      },
      py::arg("ct"), py::arg("ptv"), py::arg("angles_deg"), py::arg("isocenter"), py::arg("sad_mm") = 1000.0);
  m.def(
      "generate_case",
      [](int index, int dims, std::uint64_t seed) {
        const CaseBundle c = generate_case(PhantomConfig::with_dims(dims, seed), index);
        py::dict d;
        d["case_id"] = c.meta.case_id;
        d["ct"] = c.ct;
        d["dose"] = c.reference_dose;
        d["structures"] = structures_to(c.structures);
        d["angles_deg"] = c.beams.angles_deg;
        d["isocenter"] = c.beams.isocenter;
        if (c.beam_channel) d["beam"] = *c.beam_channel;
        return d;
      },
      py::arg("index"), py::arg("dims") = 64, py::arg("seed") = 1);

  // training schedule and verification
  m.def(
      "lr_at",
      [](int epoch, int epochs, int constant_epochs, double lr) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.constant_epochs = constant_epochs;
        cfg.lr = lr;
        cfg.validate();
        return lr_at(epoch, cfg);
      },
      py::arg("epoch"), py::arg("epochs") = 200, py::arg("constant_epochs") = 100, py::arg("lr") = 2e-4);
  m.def(
      "gradcheck",
      [](const std::string& module) {
        std::vector<GradcheckResult> r;
        if (module == "dvh" || module == "all") r = gradcheck_losses();
        if (module == "net3d" || module == "all") {
          auto n = gradcheck_net3d();
          r.insert(r.end(), n.begin(), n.end());
        }
        if (r.empty()) throw py::value_error("module must be dvh, net3d or all");
        py::list out;
        for (const auto& g : r) out.append(py::make_tuple(g.name, g.error, g.tolerance, g.passed));
        return out;
      },
      py::arg("module") = "all");
}
