#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "calxfer/chemometrics.hpp"
#include "calxfer/dataset.hpp"
#include "calxfer/error.hpp"
#include "calxfer/experiment.hpp"
#include "calxfer/freqdomain.hpp"
#include "calxfer/mfpi.hpp"
#include "calxfer/moebius.hpp"
#include "calxfer/standardization.hpp"

namespace py = pybind11;
using namespace calxfer;

namespace {

Quad to_quad(const std::vector<cplx>& points) {
  if (points.size() != 4) throw py::value_error("a quad needs exactly 4 points");
  return {points[0], points[1], points[2], points[3]};
}

}  // namespace

PYBIND11_MODULE(_calxfer, m) {
  m.doc() = "Spectral calibration transfer: DS, PDS and Moebius four-point interpolation";

  auto& error = py::register_exception<Error>(m, "Error");
  py::register_exception<SingularityError>(m, "SingularityError", error.ptr());
  py::register_exception<DegenerateQuadError>(m, "DegenerateQuadError", error.ptr());
  py::register_exception<LoadError>(m, "LoadError", error.ptr());

  // Frequency domain. Spectra are (N, M) arrays; coefficients (N, M//2 + 1).
  m.def(
      "to_frequency", [](const Eigen::MatrixXd& spectra) { return to_frequency(spectra).coefficients; },
      py::arg("spectra"));
  m.def(
      "to_wavelength",
      [](const Eigen::MatrixXcd& coefficients, int n_wavelengths) {
        FrequencySet f;
        f.n_wavelengths = n_wavelengths;
        f.coefficients = coefficients;
        auto r = to_wavelength(f);
        return py::make_tuple(r.spectra, r.imaginary_residual);
      },
      py::arg("coefficients"), py::arg("n_wavelengths"),
      "Returns (spectra, per-sample max discarded imaginary part).");
  m.def("cayley", &cayley, py::arg("z"));
  m.def("inverse_cayley", &inverse_cayley, py::arg("w"));

  // Moebius maps and four-point interpolation.
  py::class_<MoebiusMap>(m, "MoebiusMap")
      .def(py::init([](cplx a, cplx b, cplx c, cplx d) { return MoebiusMap{a, b, c, d}; }), py::arg("a"),
           py::arg("b"), py::arg("c"), py::arg("d"))
      .def_readwrite("a", &MoebiusMap::a)
      .def_readwrite("b", &MoebiusMap::b)
      .def_readwrite("c", &MoebiusMap::c)
      .def_readwrite("d", &MoebiusMap::d)
      .def("__call__", [](const MoebiusMap& map, cplx z) { return moebius_apply(map, z); })
      .def("inverse", &moebius_inverse)
      .def("compose", &moebius_compose, py::arg("inner"), "self(inner(z))");
  py::class_<AffineBlend>(m, "AffineBlend")
      .def_readonly("w", &AffineBlend::w)
      .def_readonly("z", &AffineBlend::z)
      .def_readonly("l", &AffineBlend::l)
      .def("__call__", &AffineBlend::apply)
      .def("dilatation", &AffineBlend::dilatation);
  py::class_<FpiMap>(m, "FpiMap")
      .def_readonly("forward", &FpiMap::forward)
      .def_readonly("backward", &FpiMap::backward)
      .def_readonly("blend", &FpiMap::blend)
      .def("dilatation", &FpiMap::dilatation)
      .def("__call__", [](const FpiMap& map, cplx z) { return fpi_apply(map, z); });
  m.def(
      "fpi_fit",
      [](const std::vector<cplx>& source, const std::vector<cplx>& target) {
        return fpi_fit(to_quad(source), to_quad(target));
      },
      py::arg("source"), py::arg("target"));
  m.def("fpi_apply", &fpi_apply, py::arg("map"), py::arg("z"));
  m.def(
      "ccw_sort",
      [](const std::vector<cplx>& points) {
        auto order = ccw_sort(to_quad(points));
        return py::make_tuple(std::vector<cplx>(order.points.begin(), order.points.end()),
                              std::vector<int>(order.permutation.begin(), order.permutation.end()));
      },
      py::arg("points"), "Returns (sorted points, permutation into the input).");

  // MFPI.
  py::class_<MfpiConfig>(m, "MfpiConfig")
      .def(py::init<>())
      .def_readwrite("tolerance", &MfpiConfig::tolerance)
      .def_readwrite("max_iter", &MfpiConfig::max_iter)
      .def_readwrite("reject", &MfpiConfig::reject)
      .def_property(
          "bins",
          [](const MfpiConfig& c) -> std::optional<std::vector<std::pair<int, int>>> {
            if (!c.bins) return std::nullopt;
            std::vector<std::pair<int, int>> out;
            for (const auto& r : *c.bins) out.emplace_back(r.first, r.last);
            return out;
          },
          [](MfpiConfig& c, const std::optional<std::vector<std::pair<int, int>>>& ranges) {
            if (!ranges) {
              c.bins.reset();
              return;
            }
            std::vector<BinRange> out;
            for (const auto& [a, b] : *ranges) out.push_back({a, b});
            c.bins = std::move(out);
          },
          "None for every bin, else a list of inclusive (first, last) ranges.");
  py::class_<MfpiModel>(m, "MfpiModel")
      .def_readonly("n_wavelengths", &MfpiModel::n_wavelengths)
      .def_readonly("n_bins", &MfpiModel::n_bins)
      .def_readonly("pass_through", &MfpiModel::pass_through)
      .def_readonly("degenerate_bins", &MfpiModel::degenerate_bins)
      .def_readonly("warnings", &MfpiModel::warnings)
      .def_property_readonly("fitted_bins",
                             [](const MfpiModel& model) {
                               std::vector<int> bins;
                               for (const auto& f : model.fitted) bins.push_back(f.bin);
                               return bins;
                             })
      .def(
          "transfer",
          [](const MfpiModel& model, const Eigen::MatrixXd& slave) {
            auto r = mfpi_transfer(model, slave);
            return py::make_tuple(r.spectra, r.residual.imaginary_residual, r.residual.fallback_bins);
          },
          py::arg("slave"), "Returns (spectra, imaginary residual, pole-hit bins) per sample.")
      .def("save", [](const MfpiModel& model, const fs::path& p) { save_mfpi_model(model, p); });
  m.def(
      "mfpi_fit",
      [](const Eigen::MatrixXd& master, const Eigen::MatrixXd& slave, const MfpiConfig& config,
         const std::vector<std::string>& sample_ids, int threads) {
        return mfpi_fit(to_frequency(master, sample_ids), to_frequency(slave, sample_ids), config, nullptr,
                        threads);
      },
      py::arg("master"), py::arg("slave"), py::arg("config") = MfpiConfig{},
      py::arg("sample_ids") = std::vector<std::string>{}, py::arg("threads") = 0);
  m.def("load_mfpi_model", &load_mfpi_model, py::arg("path"));

  // DS / PDS.
  py::class_<DsModel>(m, "DsModel")
      .def_readonly("f_matrix", &DsModel::f_matrix)
      .def_readonly("effective_rank", &DsModel::effective_rank)
      .def("apply", &ds_apply, py::arg("slave"))
      .def("save", [](const DsModel& model, const fs::path& p) { save_ds_model(model, p); });
  py::class_<PdsModel>(m, "PdsModel")
      .def_readonly("window", &PdsModel::window)
      .def_readonly("starts", &PdsModel::starts)
      .def_readonly("effective_ranks", &PdsModel::effective_ranks)
      .def("to_dense", &PdsModel::to_dense)
      .def("apply", &pds_apply, py::arg("slave"))
      .def("save", [](const PdsModel& model, const fs::path& p) { save_pds_model(model, p); });
  m.def(
      "ds_fit",
      [](const Eigen::MatrixXd& master, const Eigen::MatrixXd& slave, bool mean_correction) {
        return ds_fit(master, slave, mean_correction);
      },
      py::arg("master"), py::arg("slave"), py::arg("mean_correction") = false);
  m.def(
      "pds_fit",
      [](const Eigen::MatrixXd& master, const Eigen::MatrixXd& slave, int window, bool mean_correction) {
        return pds_fit(master, slave, window, mean_correction);
      },
      py::arg("master"), py::arg("slave"), py::arg("window"), py::arg("mean_correction") = false);
  m.def(
      "pds_window_search",
      [](const Eigen::MatrixXd& mc, const Eigen::MatrixXd& sc, const Eigen::MatrixXd& mv, const Eigen::MatrixXd& sv,
         int min_window, int max_window, bool mean_correction) {
        auto r = pds_window_search(mc, sc, mv, sv, min_window, max_window, mean_correction);
        std::vector<std::pair<int, double>> scores;
        for (const auto& s : r.scores) scores.emplace_back(s.window, s.mrmset);
        return py::make_tuple(r.best_window, scores);
      },
      py::arg("master_cal"), py::arg("slave_cal"), py::arg("master_val"), py::arg("slave_val"),
      py::arg("min_window"), py::arg("max_window"), py::arg("mean_correction") = false);
  m.def("load_ds_model", &load_ds_model, py::arg("path"));
  m.def("load_pds_model", &load_pds_model, py::arg("path"));

  py::class_<TransferModel>(m, "TransferModel")
      .def(py::init<>())
      .def(py::init([](const MfpiModel& s) { return TransferModel(s); }))
      .def(py::init([](const DsModel& s) { return TransferModel(s); }))
      .def(py::init([](const PdsModel& s) { return TransferModel(s); }))
      .def("apply", &TransferModel::apply, py::arg("slave"))
      .def_property_readonly("label", &TransferModel::label)
      .def_property_readonly("input_space", &TransferModel::input_space)
      .def_property_readonly("output_space", &TransferModel::output_space);
  m.def("compose", &compose_transfer, py::arg("first"), py::arg("second"));

  // Chemometrics.
  py::class_<PcrModel>(m, "PcrModel")
      .def_readonly("k", &PcrModel::k)
      .def_readonly("coefficients", &PcrModel::coefficients)
      .def("predict", &pcr_predict, py::arg("x"));
  m.def("pcr_fit", &pcr_fit, py::arg("x"), py::arg("y"), py::arg("k"));
  m.def(
      "loo_select_k",
      [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int k_max) {
        auto r = loo_select_k(x, y, k_max);
        return py::make_tuple(r.best_k, r.rmsecv);
      },
      py::arg("x"), py::arg("y"), py::arg("k_max"), "Returns (best k, RMSECV for k = 1..k_max).");
  m.def(
      "mrmset", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return mrmset(a, b); }, py::arg("master"),
      py::arg("transformed"));
  m.def("rmsep", &rmsep, py::arg("y_true"), py::arg("y_pred"));
  m.def(
      "bland_altman",
      [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, double multiplier) {
        auto r = bland_altman(a, b, multiplier);
        return py::make_tuple(r.bias, r.lower, r.upper);
      },
      py::arg("a"), py::arg("b"), py::arg("multiplier") = 1.96, "Returns (bias, lower, upper).");
  m.def(
      "kennard_stone_select", [](const Eigen::MatrixXd& x, int k) { return kennard_stone_select(x, k); },
      py::arg("x"), py::arg("k"));

  m.def(
      "run_experiment",
      [](const fs::path& config, std::optional<fs::path> out) {
        RunOptions options;
        options.output_dir = std::move(out);
        return run_experiment(load_config(config), options).output_dir;
      },
      py::arg("config"), py::arg("out") = std::nullopt, "Runs a config file; returns the output directory.");
}
