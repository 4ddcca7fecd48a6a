#include "soh/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace soh;

namespace {

std::vector<int> path_list(const WarpPath& p) {
  std::vector<int> flat;
  for (const auto& [r, t] : p.pairs) {
    flat.push_back(r);
    flat.push_back(t);
  }
  return flat;
}

py::list pairs(const WarpPath& p) {
  py::list out;
  for (const auto& [r, t] : p.pairs) out.append(py::make_tuple(r, t));
  return out;
}

EdtwOptions edtw_options(int components, double tol, int max_iter, double energy_weight,
                         double ridge) {
  EdtwOptions o;
  o.components = components;
  o.tol = tol;
  o.max_iter = max_iter;
  o.energy_weight = energy_weight;
  o.ridge = ridge;
  return o;
}

template <typename Fn>
std::string run_logged(Fn&& fn) {
  std::ostringstream log;
  guarded([&] { fn(log); });
  return log.str();
}

}  // namespace

PYBIND11_MODULE(_soh, m) {
  m.doc() = "Battery state-of-health estimation: synchronisation, importance, LSTM regression";

  static py::exception<Error> soh_error(m, "SohError");
  static py::exception<CommandError> command_error(m, "CommandError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const CommandError& e) {
      py::object exc = command_error;
      py::object inst = exc(e.what());
      inst.attr("exit_code") = e.exit_code();
      inst.attr("reason") = e.reason();
      PyErr_SetObject(command_error.ptr(), inst.ptr());
    } catch (const Error& e) {
      py::object exc = soh_error;
      py::object inst = exc(e.what());
      inst.attr("code") = std::string(errc_name(e.code()));
      PyErr_SetObject(soh_error.ptr(), inst.ptr());
    }
  });

  // Dataset ---------------------------------------------------------------
  py::class_<CycleTrajectory>(m, "CycleTrajectory")
      .def(py::init<>())
      .def_readwrite("cycle_index", &CycleTrajectory::cycle_index)
      .def_readwrite("samples", &CycleTrajectory::samples)
      .def_readwrite("sample_period", &CycleTrajectory::sample_period)
      .def_property_readonly("length", &CycleTrajectory::length);

  py::class_<BatteryRecord>(m, "BatteryRecord")
      .def(py::init<>())
      .def_readwrite("battery_id", &BatteryRecord::battery_id)
      .def_readwrite("nominal_capacity", &BatteryRecord::nominal_capacity)
      .def_readwrite("cycles", &BatteryRecord::cycles)
      .def_readwrite("capacities", &BatteryRecord::capacities)
      .def("__len__", &BatteryRecord::size);

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("cycles", &SyntheticConfig::cycles)
      .def_readwrite("base_length", &SyntheticConfig::base_length)
      .def_readwrite("nominal_capacity", &SyntheticConfig::nominal_capacity)
      .def_readwrite("fade_alpha", &SyntheticConfig::fade_alpha)
      .def_readwrite("fade_beta", &SyntheticConfig::fade_beta)
      .def_readwrite("length_sensitivity", &SyntheticConfig::length_sensitivity)
      .def_readwrite("noise_level", &SyntheticConfig::noise_level);

  py::class_<SplitSpec>(m, "SplitSpec")
      .def(py::init<>())
      .def(py::init([](int start, double fraction) { return SplitSpec{start, fraction}; }),
           py::arg("degradation_start_cycle"), py::arg("train_fraction"))
      .def_readwrite("degradation_start_cycle", &SplitSpec::degradation_start_cycle)
      .def_readwrite("train_fraction", &SplitSpec::train_fraction);

  py::class_<Split>(m, "Split")
      .def_readonly("train", &Split::train)
      .def_readonly("test", &Split::test)
      .def_readonly("excluded", &Split::excluded);

  m.def("generate_synthetic", &generate_synthetic, py::arg("config") = SyntheticConfig{},
        py::arg("seed") = 7);
  m.def("parse_battery", &parse_battery, py::arg("cycles_csv"), py::arg("labels_csv"),
        py::arg("nominal_capacity") = 1.1);
  m.def("write_battery", &write_battery, py::arg("record"), py::arg("cycles_csv"),
        py::arg("labels_csv"));
  m.def("split", &split, py::arg("record"), py::arg("spec"));

  // Warping ---------------------------------------------------------------
  m.def(
      "dtw_align",
      [](const Eigen::MatrixXd& ref, const Eigen::MatrixXd& target) {
        const auto r = dtw_align(ref, target);
        return py::make_tuple(pairs(r.path), r.distance);
      },
      py::arg("ref"), py::arg("target"), "Returns (path, distance); columns are time steps.");

  py::class_<EdtwOptions>(m, "EdtwOptions")
      .def(py::init(&edtw_options), py::arg("components") = 2, py::arg("tol") = 0.01,
           py::arg("max_iter") = 50, py::arg("energy_weight") = 1.0, py::arg("ridge") = 1e-6)
      .def_readwrite("components", &EdtwOptions::components)
      .def_readwrite("tol", &EdtwOptions::tol)
      .def_readwrite("max_iter", &EdtwOptions::max_iter)
      .def_readwrite("energy_weight", &EdtwOptions::energy_weight)
      .def_readwrite("ridge", &EdtwOptions::ridge);

  py::class_<EdtwSolution>(m, "EdtwSolution")
      .def_property_readonly("path", [](const EdtwSolution& s) { return pairs(s.path); })
      .def_readonly("v_ref", &EdtwSolution::v_ref)
      .def_readonly("v_target", &EdtwSolution::v_target)
      .def_readonly("objective_trace", &EdtwSolution::objective_trace)
      .def_readonly("converged", &EdtwSolution::converged)
      .def_readonly("iterations_used", &EdtwSolution::iterations_used)
      .def_readonly("alignment_cost", &EdtwSolution::alignment_cost)
      .def_readonly("energy_penalty", &EdtwSolution::energy_penalty);

  m.def("edtw_solve", &edtw_solve, py::arg("ref"), py::arg("target"),
        py::arg("options") = EdtwOptions{});
  m.def("relative_energy_error", &relative_energy_error, py::arg("original"), py::arg("synced"));

  py::class_<SyncedBattery>(m, "SyncedBattery")
      .def_readonly("source", &SyncedBattery::source)
      .def_readonly("reference_length", &SyncedBattery::reference_length)
      .def_readonly("ref_cycle", &SyncedBattery::ref_cycle)
      .def_readonly("cycle_indices", &SyncedBattery::cycle_indices)
      .def_readonly("capacities", &SyncedBattery::capacities)
      .def_readonly("synced", &SyncedBattery::synced)
      .def_readonly("per_cycle_energy_error", &SyncedBattery::per_cycle_energy_error)
      .def_readonly("converged", &SyncedBattery::converged)
      .def("voltage_monotone", &SyncedBattery::voltage_monotone)
      .def("__len__", &SyncedBattery::size);

  m.def("synchronize_battery", &synchronize_battery, py::arg("record"), py::arg("ref_cycle") = 1,
        py::arg("options") = EdtwOptions{}, py::arg("noise_bound") = 0.0, py::arg("threads") = 0,
        py::call_guard<py::gil_scoped_release>());

  // Importance and encoding -------------------------------------------------
  py::class_<Interval>(m, "Interval")
      .def(py::init([](int s, int e) { return Interval{s, e}; }), py::arg("start"), py::arg("end"))
      .def_readwrite("start", &Interval::start)
      .def_readwrite("end", &Interval::end)
      .def("__repr__", [](const Interval& i) {
        return "Interval(" + std::to_string(i.start) + ", " + std::to_string(i.end) + ")";
      });

  py::class_<ImportanceProfile>(m, "ImportanceProfile")
      .def_readonly("scores", &ImportanceProfile::scores)
      .def_readonly("knee_index", &ImportanceProfile::knee_index)
      .def_readonly("threshold", &ImportanceProfile::threshold)
      .def_readonly("interval", &ImportanceProfile::interval);

  m.def("importance_profile", &importance_profile, py::arg("synced"));
  m.def("analyse_importance", &analyse_importance, py::arg("synced"));
  m.def(
      "detect_knee", [](const std::vector<double>& c) { return detect_knee(c); }, py::arg("curve"));
  m.def(
      "select_important",
      [](const std::vector<double>& s, double threshold) { return select_important(s, threshold); },
      py::arg("scores"), py::arg("threshold"));

  py::class_<GridSpec>(m, "GridSpec")
      .def_readonly("grids_per_variable", &GridSpec::grids_per_variable)
      .def_readonly("ranges", &GridSpec::ranges)
      .def("hash", &GridSpec::hash);

  py::class_<EncodedCycle>(m, "EncodedCycle")
      .def_readonly("variables", &EncodedCycle::variables)
      .def_readonly("grids", &EncodedCycle::grids)
      .def_readonly("interval", &EncodedCycle::interval)
      .def_readonly("bins", &EncodedCycle::bins)
      .def("dense", &EncodedCycle::dense);

  m.def("fit_grid", &fit_grid, py::arg("synced_train"), py::arg("interval"), py::arg("grids") = 200);
  m.def("grid_encode", &grid_encode, py::arg("cycle_synced"), py::arg("interval"), py::arg("spec"));

  // Regressor ----------------------------------------------------------------
  py::class_<Architecture>(m, "Architecture")
      .def(py::init([](int layers, int hidden) { return Architecture{layers, hidden}; }),
           py::arg("layers") = 2, py::arg("hidden") = 100);

  py::class_<ModelParameters>(m, "ModelParameters")
      .def_readonly("input_dim", &ModelParameters::input_dim)
      .def_readonly("hidden", &ModelParameters::hidden)
      .def_readwrite("grid_hash", &ModelParameters::grid_hash)
      .def_readonly("label_min", &ModelParameters::label_min)
      .def_readonly("label_max", &ModelParameters::label_max)
      .def_property_readonly("layers", [](const ModelParameters& p) { return p.layers.size(); })
      .def("parameter_count", &ModelParameters::parameter_count);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("early_stop_patience", &TrainConfig::early_stop_patience)
      .def_readwrite("validation_fraction", &TrainConfig::validation_fraction)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<LabeledCycle>(m, "LabeledCycle")
      .def(py::init([](EncodedCycle e, double c) { return LabeledCycle{std::move(e), c}; }),
           py::arg("encoded"), py::arg("capacity"))
      .def_readonly("encoded", &LabeledCycle::encoded)
      .def_readonly("capacity", &LabeledCycle::capacity);

  py::class_<TrainHistory>(m, "TrainHistory")
      .def_readonly("train_rmse", &TrainHistory::train_rmse)
      .def_readonly("validation_rmse", &TrainHistory::validation_rmse)
      .def_readonly("best_rmse", &TrainHistory::best_rmse)
      .def_readonly("best_epoch", &TrainHistory::best_epoch);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("params", &TrainResult::params)
      .def_readonly("history", &TrainResult::history);

  py::class_<Metrics>(m, "Metrics")
      .def_readonly("rmse_percent", &Metrics::rmse_percent)
      .def_readonly("r_squared", &Metrics::r_squared);

  m.def("init_parameters", &init_parameters, py::arg("arch"), py::arg("input_dim"),
        py::arg("seed"));
  m.def("forward", &forward, py::arg("params"), py::arg("encoded"));
  m.def(
      "train",
      [](const std::vector<LabeledCycle>& set, const TrainConfig& config, const Architecture& arch) {
        return train(set, config, arch);
      },
      py::arg("train_set"), py::arg("config") = TrainConfig{}, py::arg("arch") = Architecture{},
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "evaluate",
      [](const ModelParameters& p, const std::vector<LabeledCycle>& set, double nominal) {
        return evaluate(p, set, nominal);
      },
      py::arg("params"), py::arg("test_set"), py::arg("nominal_capacity"));
  m.def(
      "score",
      [](const std::vector<double>& pred, const std::vector<double>& truth, double nominal) {
        return score(pred, truth, nominal);
      },
      py::arg("predicted"), py::arg("truth"), py::arg("nominal_capacity"));
  m.def(
      "gradient_check",
      [](const ModelParameters& p, const EncodedCycle& e, double capacity, double eps,
         int coordinates, std::uint64_t seed) {
        return gradient_check(p, e, capacity, eps, coordinates, seed);
      },
      py::arg("params"), py::arg("encoded"), py::arg("capacity"), py::arg("epsilon") = 1e-5,
      py::arg("coordinates") = 200, py::arg("seed") = 0);
  m.def("save_model", &save_model, py::arg("params"), py::arg("path"));
  m.def(
      "load_model",
      [](const std::filesystem::path& path, std::uint64_t expected) {
        auto loaded = load_model(path, expected);
        return py::make_tuple(loaded.params, loaded.warnings);
      },
      py::arg("path"), py::arg("expected_grid_hash") = 0);

  // Real-time estimation ---------------------------------------------------
  py::class_<OnlineSession>(m, "OnlineSession")
      .def_static("build", &OnlineSession::build, py::arg("training"), py::arg("reference"),
                  py::arg("edtw"), py::arg("grid"), py::arg("importance"), py::arg("model"))
      .def_readonly("importance", &OnlineSession::importance);

  py::class_<RealtimeEstimate>(m, "RealtimeEstimate")
      .def_readonly("step", &RealtimeEstimate::step)
      .def_readonly("capacity", &RealtimeEstimate::capacity)
      .def_readonly("matched_cycle", &RealtimeEstimate::matched_cycle)
      .def_readonly("in_important_interval", &RealtimeEstimate::in_important_interval)
      .def_readonly("error", &RealtimeEstimate::error);

  m.def(
      "estimate_at",
      [](const Eigen::MatrixXd& prefix, const OnlineSession& s) {
        return estimate_at(OnlinePrefix{prefix}, s);
      },
      py::arg("prefix"), py::arg("session"));
  m.def("offline_estimate", &offline_estimate, py::arg("cycle"), py::arg("session"));
  m.def("stream_cycle", &stream_cycle, py::arg("cycle"), py::arg("session"),
        py::call_guard<py::gil_scoped_release>());

  // Pipeline commands ------------------------------------------------------
  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def(py::init([](const py::dict& kv) {
             PipelineConfig c;
             for (const auto& [k, v] : kv) c.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
             return c;
           }),
           py::arg("settings"))
      .def("set", [](PipelineConfig& c, const std::string& k, const std::string& v) { c.set(k, v); })
      .def("load", &PipelineConfig::load)
      .def_readwrite("out_dir", &PipelineConfig::out_dir)
      .def_readwrite("seed", &PipelineConfig::seed);

  m.def("config_keys", &config_keys);
  m.def("run_command", [](const std::string& name, const PipelineConfig& c) {
    py::gil_scoped_release release;
    if (name == "synth") return run_logged([&](std::ostream& l) { cmd_synth(c, l); });
    if (name == "ingest") return run_logged([&](std::ostream& l) { cmd_ingest(c, l); });
    if (name == "sync") return run_logged([&](std::ostream& l) { cmd_sync(c, l); });
    if (name == "importance") return run_logged([&](std::ostream& l) { cmd_importance(c, l); });
    if (name == "train") return run_logged([&](std::ostream& l) { cmd_train(c, l); });
    if (name == "evaluate") return run_logged([&](std::ostream& l) { cmd_evaluate(c, l); });
    if (name == "stream") return run_logged([&](std::ostream& l) { cmd_stream(c, l); });
    throw CommandError(2, "unknown-command", "unknown command " + name);
  }, py::arg("name"), py::arg("config"), "Runs a pipeline command and returns its log text.");
}
