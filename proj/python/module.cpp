#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "tsaug/binary_io.hpp"
#include "tsaug/pipeline.hpp"

namespace py = pybind11;
using namespace tsaug;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  if (m.size() > 0) std::memcpy(out.mutable_data(), m.data(), m.size() * sizeof(double));
  return out;
}

Matrix from_numpy(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  if (m.size() > 0) std::memcpy(m.data(), a.data(), m.size() * sizeof(double));
  return m;
}

ExperimentConfig parse_config(const std::string& json_text) {
  return experiment_config_from_json(nlohmann::json::parse(json_text.empty() ? "{}" : json_text));
}

py::list fold_rows(const EvalReport& r) {
  py::list out;
  for (const auto& f : r.folds) {
    out.append(py::dict(py::arg("model") = f.model, py::arg("dataset") = f.dataset, py::arg("step") = f.step,
                        py::arg("fold") = f.fold, py::arg("mae") = f.mae));
  }
  return out;
}

py::list aggregate_rows(const EvalReport& r) {
  py::list out;
  for (const auto& a : r.aggregate) {
    out.append(py::dict(py::arg("model") = a.model, py::arg("dataset") = a.dataset, py::arg("step") = a.step,
                        py::arg("mean_mae") = a.mean_mae, py::arg("std_mae") = a.std_mae));
  }
  return out;
}

py::dict report_dict(const EvalReport& r) { return py::dict(py::arg("folds") = fold_rows(r), py::arg("aggregate") = aggregate_rows(r)); }

}  // namespace

PYBIND11_MODULE(_tsaug, m) {
  m.doc() = "Forecast-based extension of multichannel time series and paired k-fold age regression.";

  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<TimeSeriesRecord>(m, "Record")
      .def(py::init([](std::string id, double age, double tr, const Array& series) {
             return TimeSeriesRecord{std::move(id), age, tr, from_numpy(series)};
           }),
           py::arg("subject_id"), py::arg("age"), py::arg("tr_seconds"), py::arg("series"))
      .def_readwrite("subject_id", &TimeSeriesRecord::subject_id)
      .def_readwrite("age", &TimeSeriesRecord::age)
      .def_readwrite("tr_seconds", &TimeSeriesRecord::tr_seconds)
      .def_property(
          "series", [](const TimeSeriesRecord& r) { return to_numpy(r.series); },
          [](TimeSeriesRecord& r, const Array& a) { r.series = from_numpy(a); }, "channels × time array (a copy)")
      .def_property_readonly("channels", &TimeSeriesRecord::channels)
      .def_property_readonly("length", &TimeSeriesRecord::length)
      .def("__repr__", [](const TimeSeriesRecord& r) {
        return "<Record " + r.subject_id + " age=" + std::to_string(r.age) + " " + std::to_string(r.channels()) + "x" +
               std::to_string(r.length()) + ">";
      });

  m.def(
      "gen_synthetic",
      [](std::size_t subjects, std::size_t channels, std::size_t length, double tr, std::uint64_t seed) {
        RngStream rng(seed, "data/synthetic");
        return gen_synthetic(SyntheticSpec{subjects, channels, length, tr}, rng);
      },
      py::arg("subjects") = 100, py::arg("channels") = 8, py::arg("length") = 122, py::arg("tr_seconds") = 2.94,
      py::arg("seed") = 0, "Synthetic AR(2) cohort; same bytes as `tsaug gen-data` for equal arguments.");

  m.def("load_tsds", &load_tsds, py::arg("path"));
  m.def("save_tsds", &save_tsds, py::arg("records"), py::arg("path"));
  m.def("load_csv", &load_csv, py::arg("path"));
  m.def("save_csv", &save_csv, py::arg("records"), py::arg("path"));

  py::class_<ForecasterCheckpoint>(m, "Forecaster")
      .def_property_readonly("mode", [](const ForecasterCheckpoint& c) { return std::string(to_string(c.mode)); })
      .def_property_readonly("channels", &ForecasterCheckpoint::channels)
      .def_property_readonly("input_length", &ForecasterCheckpoint::input_length)
      .def_readonly("epochs_run", &ForecasterCheckpoint::epochs_run)
      .def_readonly("final_train_mse", &ForecasterCheckpoint::final_train_mse)
      .def_readonly("final_test_mse", &ForecasterCheckpoint::final_test_mse)
      .def(
          "forecast",
          [](const ForecasterCheckpoint& c, const Array& window, std::size_t steps) {
            return to_numpy(c.forecast(from_numpy(window), steps));
          },
          py::arg("window"), py::arg("steps"), "window: input_length × channels, z-scored; returns steps × channels")
      .def("save", [](const ForecasterCheckpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); },
           py::arg("path"));

  m.def(
      "load_forecaster", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"));

  m.def(
      "train_forecaster",
      [](const std::vector<TimeSeriesRecord>& records, const std::string& mode, const std::string& config_json) {
        auto c = parse_config(config_json);
        const auto fm = forecast_mode_from_string(mode);
        c.forecaster_modes = {fm};
        c.augment_mode = fm;
        py::gil_scoped_release release;
        auto stage = run_augment_stage(c, records);
        auto& trained = stage.forecasters.at(fm);
        std::vector<std::tuple<std::size_t, double, double>> log;
        for (const auto& row : trained.log) log.emplace_back(row.epoch, row.train_mse, row.test_mse);
        return std::make_pair(std::move(trained.checkpoint), std::move(log));
      },
      py::arg("records"), py::arg("mode"), py::arg("config_json") = "{}",
      "Returns (forecaster, [(epoch, train_mse, test_mse), ...]).");

  m.def("augment", &augment_dataset, py::arg("records"), py::arg("forecaster"), py::arg("steps"),
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "evaluate",
      [](const std::vector<TimeSeriesRecord>& baseline, const std::vector<TimeSeriesRecord>& augmented,
         const std::string& config_json) {
        const auto c = parse_config(config_json);
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = run_validation(c, baseline, augmented);
        }
        return report_dict(r);
      },
      py::arg("baseline"), py::arg("augmented"), py::arg("config_json") = "{}");

  m.def(
      "sweep",
      [](const std::vector<TimeSeriesRecord>& baseline, const ForecasterCheckpoint& forecaster,
         const std::vector<std::size_t>& steps, const std::string& config_json) {
        const auto c = parse_config(config_json);
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = step_sweep(c, baseline, forecaster, steps);
        }
        return report_dict(r);
      },
      py::arg("baseline"), py::arg("forecaster"), py::arg("steps"), py::arg("config_json") = "{}");

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::filesystem::path& out_dir) {
        const auto c = parse_config(config_json);
        ExperimentOutputs out;
        {
          py::gil_scoped_release release;
          out = run_experiment(c, out_dir);
        }
        return report_dict(out.report);
      },
      py::arg("config_json"), py::arg("out_dir"));

  m.def(
      "default_config", [] { return to_json(ExperimentConfig{}).dump(); }, "Default experiment config as JSON text.");
}
