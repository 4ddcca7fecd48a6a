// Acceptance run: one PASS/FAIL/SKIP line per criterion.
//
//   soh_acceptance [--work DIR] [--report-only]
//
// Real-data criteria read SOH_REAL_DATA, a directory holding
// battery22_cycles.csv, battery22_labels.csv, battery1_cycles.csv and
// battery1_labels.csv.

#include "dtw_oracle.hpp"
#include "soh/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace soh;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

int failures = 0;
std::ofstream report_file;

void emit(const std::string& line) {
  std::cout << line << std::endl;
  report_file << line << std::endl;
}

void report(int id, const char* name, const Outcome& o) {
  const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
  if (o.status == Status::fail) ++failures;
  emit(std::string("[") + tag + "] " + std::to_string(id) + ". " + name + ": " + o.detail);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> read_kv(const fs::path& file) {
  std::map<std::string, std::string> out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

PipelineConfig synthetic_config(const fs::path& dir) {
  PipelineConfig c;
  c.out_dir = dir;
  return c;
}

// ---------------------------------------------------------------------------

Outcome dtw_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 6), vars(1, 2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const int j = vars(rng);
    Eigen::MatrixXd a(j, len(rng)), b(j, len(rng));
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
    worst = std::max(worst, std::abs(dtw_align(a, b).distance - test::brute_force_dtw(a, b)));
  }
  const double secs = since(t0);
  const bool ok = worst <= 1e-12 && secs < 10.0;
  return {ok ? Status::pass : Status::fail,
          "500 pairs, max |dtw - exhaustive| = " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

/// Writes one line per pair: seed, target cycle, iterations, converged, trace.
Outcome edtw_descent(const fs::path& dir) {
  const auto t0 = Clock::now();
  fs::create_directories(dir);
  std::ofstream out(dir / "edtw_traces.csv");
  out << std::setprecision(17);
  int converged = 0;
  int monotone = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto battery = generate_synthetic(SyntheticConfig{}, seed);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(1, battery.size() - 1);
    const auto target = pick(rng);
    const auto sol = edtw_solve(battery.cycles[0].samples, battery.cycles[target].samples);
    bool mono = true;
    for (std::size_t i = 1; i < sol.objective_trace.size(); ++i)
      mono = mono && sol.objective_trace[i] <= sol.objective_trace[i - 1] + 1e-9;
    monotone += mono;
    converged += sol.converged && sol.iterations_used <= 50;
    out << seed << ',' << battery.cycles[target].cycle_index << ',' << sol.iterations_used << ','
        << sol.converged;
    for (double v : sol.objective_trace) out << ',' << v;
    out << '\n';
  }
  const double secs = since(t0);
  const bool ok = monotone == 100 && converged >= 95 && secs < 60.0;
  return {ok ? Status::pass : Status::fail,
          std::to_string(monotone) + "/100 traces non-increasing, " + std::to_string(converged) +
              "/100 converged, " + fmt(secs, 3) + " s"};
}

Outcome energy_preservation(const fs::path& dir) {
  auto config = synthetic_config(dir);
  std::ostringstream log;
  cmd_synth(config, log);
  cmd_sync(config, log);
  const auto meta = read_kv(dir / "sync_meta.txt");
  const double p90 = std::stod(meta.at("energy_error_p90"));
  return {p90 <= 0.05 ? Status::pass : Status::fail,
          "C = 200, K_ref = " + meta.at("reference_length") + ", p90 energy error = " + fmt(p90) +
              " (p50 " + fmt(std::stod(meta.at("energy_error_p50"))) + ", max " +
              fmt(std::stod(meta.at("energy_error_max"))) + ")"};
}

struct RealData {
  fs::path train_cycles, train_labels, test_cycles, test_labels;
};

std::optional<RealData> real_data() {
  const char* root = std::getenv("SOH_REAL_DATA");
  if (root == nullptr) return std::nullopt;
  const fs::path r(root);
  RealData d{r / "battery22_cycles.csv", r / "battery22_labels.csv", r / "battery1_cycles.csv",
             r / "battery1_labels.csv"};
  for (const auto& f : {d.train_cycles, d.train_labels, d.test_cycles, d.test_labels})
    if (!fs::is_regular_file(f)) return std::nullopt;
  return d;
}

PipelineConfig real_config(const RealData& d, const fs::path& dir) {
  PipelineConfig c;
  c.out_dir = dir;
  c.cycles = d.train_cycles;
  c.labels = d.train_labels;
  c.test_cycles = d.test_cycles;
  c.test_labels = d.test_labels;
  c.split = {301, 0.7};
  return c;
}

Outcome importance_anchors(const fs::path& dir) {
  const auto data = real_data();
  if (!data) return {Status::skip, "real Battery 22 data not supplied (set SOH_REAL_DATA)"};
  const auto config = real_config(*data, dir);
  std::ostringstream log;
  cmd_sync(config, log);
  cmd_importance(config, log);
  const auto sync = read_kv(dir / "sync_meta.txt");
  const auto imp = read_kv(dir / "importance_meta.txt");
  const int kref = std::stoi(sync.at("reference_length"));
  const double delta = std::stod(imp.at("delta"));
  const int s = std::stoi(imp.at("interval_start_k")), e = std::stoi(imp.at("interval_end_k"));
  const bool ok = kref == 272 && std::abs(delta - 0.35) <= 0.05 && std::abs(s - 51) <= 10 &&
                  std::abs(e - 240) <= 10;
  return {ok ? Status::pass : Status::fail, "K_ref = " + std::to_string(kref) + ", delta = " +
                                                fmt(delta) + ", interval [" + std::to_string(s) +
                                                ", " + std::to_string(e) + "]"};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> bin(0, 199);
  double worst = 0.0;
  for (std::uint64_t point = 1; point <= 10; ++point) {
    const auto params = init_parameters({}, 400, point);
    EncodedCycle e;
    e.variables = 2;
    e.grids = 200;
    e.interval = {0, 39};
    for (int i = 0; i < 80; ++i) e.bins.push_back(static_cast<std::uint16_t>(bin(rng)));
    worst = std::max(worst, gradient_check(params, e, 0.8 + 0.03 * point, 1e-5, 200, point));
  }
  const double secs = since(t0);
  const bool ok = worst <= 1e-4 && secs < 30.0;
  return {ok ? Status::pass : Status::fail, "2x100 LSTM, 10 points x 200 coordinates, max rel err = " +
                                                fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome regression_quality(const fs::path& dir, Metrics* out = nullptr) {
  const auto t0 = Clock::now();
  auto config = synthetic_config(dir);
  std::ostringstream log;
  cmd_synth(config, log);
  cmd_sync(config, log);
  cmd_train(config, log);
  const auto m = cmd_evaluate(config, log);
  if (out) *out = m;
  const double secs = since(t0);
  const bool ok = m.r_squared >= 0.9 && m.rmse_percent <= 2.0 && secs < 300.0;
  return {ok ? Status::pass : Status::fail, "chronological 70/30 split, test R^2 = " +
                                                fmt(m.r_squared) + ", RMSE = " +
                                                fmt(m.rmse_percent) + " % of nominal, " +
                                                fmt(secs, 3) + " s"};
}

/// Same synchronised battery, but every tenth cycle pattern {2, 5, 8} held out,
/// so the test capacities lie inside the training range.
std::string interleaved_diagnostic(const fs::path& dir) {
  const auto config = synthetic_config(dir);
  const auto record = parse_battery(config.cycles_path(), config.labels_path(), 1.1);
  const auto synced = read_synced(dir, record);
  SyncedBattery train_part = synced;
  train_part.cycle_indices.clear();
  train_part.capacities.clear();
  train_part.synced.clear();
  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < synced.size(); ++i) {
    const auto r = i % 10;
    if (r == 2 || r == 5 || r == 8) {
      test_rows.push_back(i);
      continue;
    }
    train_part.cycle_indices.push_back(synced.cycle_indices[i]);
    train_part.capacities.push_back(synced.capacities[i]);
    train_part.synced.push_back(synced.synced[i]);
  }
  const auto profile = analyse_importance(train_part);
  const auto grid = fit_grid(train_part, profile.interval, config.grids);
  std::vector<LabeledCycle> train_set, test_set;
  for (std::size_t i = 0; i < train_part.size(); ++i)
    train_set.push_back({grid_encode(train_part.synced[i], profile.interval, grid),
                         train_part.capacities[i]});
  for (auto i : test_rows)
    test_set.push_back({grid_encode(synced.synced[i], profile.interval, grid), synced.capacities[i]});
  TrainConfig tc = config.train;
  tc.seed = config.seed;
  const auto result = train(train_set, tc);
  const auto m = evaluate(result.params, test_set, 1.1);
  return "interleaved split (" + std::to_string(train_set.size()) + " train / " +
         std::to_string(test_set.size()) + " test): R^2 = " + fmt(m.r_squared) +
         ", RMSE = " + fmt(m.rmse_percent) + " %";
}

Outcome real_data_accuracy(const fs::path& dir) {
  const auto data = real_data();
  if (!data) return {Status::skip, "real Battery 22 / Battery 1 data not supplied (set SOH_REAL_DATA)"};
  const auto config = real_config(*data, dir);
  std::ostringstream log;
  cmd_sync(config, log);
  cmd_train(config, log);
  const auto m = cmd_evaluate(config, log);
  const bool ok = m.rmse_percent <= 2.5 && m.r_squared >= 0.95;
  return {ok ? Status::pass : Status::fail,
          "Battery 1 R^2 = " + fmt(m.r_squared) + ", RMSE = " + fmt(m.rmse_percent) + " %"};
}

OnlineSession session_from(const PipelineConfig& config) {
  const auto record = parse_battery(config.cycles_path(), config.labels_path(),
                                    config.nominal_capacity);
  const auto parts = split(record, config.split);
  const auto profile = read_importance(config.out_dir);
  const auto grid = read_grid(config.artifact("grid.txt"));
  auto model = load_model(config.model_path()).params;
  return OnlineSession::build(parts.train, record.cycles.front(), config.edtw, grid, profile,
                              std::move(model));
}

/// Needs the artefacts of regression_quality in `dir`; writes online_offline.csv.
Outcome online_offline(const fs::path& dir) {
  const auto t0 = Clock::now();
  const auto config = synthetic_config(dir);
  const auto session = session_from(config);
  std::ofstream out(dir / "online_offline.csv");
  out << std::setprecision(17) << "cycle,online_ah,offline_ah\n";
  int equal = 0;
  const auto n = session.training.size();
  for (const auto& c : session.training.cycles) {
    const auto online = estimate_at(OnlinePrefix{c.samples}, session);
    const double offline = offline_estimate(c.samples, session);
    equal += !online.error && online.capacity == offline;
    out << c.cycle_index << ',' << online.capacity << ',' << offline << '\n';
  }
  const bool ok = equal == static_cast<int>(n);
  return {ok ? Status::pass : Status::fail,
          std::to_string(equal) + "/" + std::to_string(n) +
              " training cycles bitwise equal at k = K_c, " + fmt(since(t0), 3) + " s"};
}

Outcome error_shape(const fs::path& dir) {
  const auto t0 = Clock::now();
  auto config = synthetic_config(dir);
  config.stream_every = 1;
  std::ostringstream log;
  cmd_stream(config, log);
  double in_sum = 0.0, before_sum = 0.0, first_sum = 0.0, final_sum = 0.0;
  long in_n = 0, before_n = 0, cycles = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("stream_", 0) != 0 || name == "stream_error_by_step.csv") continue;
    std::ifstream in(entry.path());
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<double, bool>> rows;
    double truth = 0.0;
    while (std::getline(in, line)) {
      if (line.rfind("#", 0) == 0) {
        const auto at = line.find("truth_ah = ");
        truth = std::stod(line.substr(at + 11));
        continue;
      }
      std::istringstream row(line);
      std::string k, est, matched, flag;
      std::getline(row, k, ',');
      std::getline(row, est, ',');
      std::getline(row, matched, ',');
      std::getline(row, flag, ',');
      rows.emplace_back(std::stod(est), flag == "1");
    }
    if (rows.empty()) continue;
    ++cycles;
    bool entered = false;
    for (const auto& [est, inside] : rows) {
      const double err = std::abs(est - truth);
      entered = entered || inside;
      if (inside) {
        in_sum += err;
        ++in_n;
      } else if (!entered) {
        before_sum += err;
        ++before_n;
      }
    }
    first_sum += std::abs(rows.front().first - truth);
    final_sum += std::abs(rows.back().first - truth);
  }
  if (cycles == 0 || in_n == 0 || before_n == 0)
    return {Status::fail, "no usable streamed steps"};
  const double mae_in = in_sum / in_n, mae_before = before_sum / before_n;
  const double first = first_sum / cycles, final = final_sum / cycles;
  const bool ok = mae_in < mae_before && final <= first;
  return {ok ? Status::pass : Status::fail,
          std::to_string(cycles) + " test cycles, MAE inside interval " + fmt(mae_in) +
              " Ah vs before " + fmt(mae_before) + " Ah, final-step " + fmt(final) +
              " Ah vs first-step " + fmt(first) + " Ah, " + fmt(since(t0), 3) + " s"};
}

/// Relative path -> bytes for every regular file under `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

Outcome determinism(const fs::path& first, const fs::path& second) {
  fs::remove_all(second);
  edtw_descent(second / "c2");
  regression_quality(second / "c6");
  online_offline(second / "c6");
  std::vector<std::string> differing;
  std::size_t compared = 0;
  for (const char* sub : {"c2", "c6"}) {
    const auto a = snapshot(first / sub);
    const auto b = snapshot(second / sub);
    for (const auto& [name, bytes] : a) {
      ++compared;
      const auto it = b.find(name);
      if (it == b.end() || it->second != bytes) differing.push_back(std::string(sub) + "/" + name);
    }
    for (const auto& [name, bytes] : b)
      if (!a.count(name)) differing.push_back(std::string(sub) + "/" + name);
  }
  if (differing.empty())
    return {Status::pass, std::to_string(compared) + " output files byte-identical across reruns"};
  std::string list;
  for (const auto& d : differing) list += " " + d;
  return {Status::fail, "differing files:" + list};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "soh_acceptance";
  bool report_only = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) work = argv[++i];
    else if (std::strcmp(argv[i], "--report-only") == 0) report_only = true;
    else {
      std::cerr << "usage: soh_acceptance [--work DIR] [--report-only]\n";
      return 2;
    }
  }
  fs::remove_all(work);
  const auto run1 = work / "run1";
  const auto run2 = work / "run2";
  fs::create_directories(run1);
  report_file.open(work / "acceptance_report.txt");

  auto guarded_report = [](int id, const char* name, auto&& fn) {
    try {
      report(id, name, fn());
    } catch (const std::exception& e) {
      report(id, name, {Status::fail, std::string("error: ") + e.what()});
    }
  };

  guarded_report(1, "DTW oracle equivalence", [] { return dtw_oracle(); });
  guarded_report(2, "EDTW descent", [&] { return edtw_descent(run1 / "c2"); });
  guarded_report(3, "Energy preservation", [&] { return energy_preservation(run1 / "c3"); });
  guarded_report(4, "Importance anchors", [&] { return importance_anchors(run1 / "c4"); });
  guarded_report(5, "Gradient correctness", [] { return gradient_correctness(); });
  guarded_report(6, "Synthetic regression quality", [&] { return regression_quality(run1 / "c6"); });
  try {
    emit("[INFO] 6. " + interleaved_diagnostic(run1 / "c6"));
  } catch (const std::exception& e) {
    emit(std::string("[INFO] 6. interleaved diagnostic failed: ") + e.what());
  }
  guarded_report(7, "Real-data accuracy", [&] { return real_data_accuracy(run1 / "c7"); });
  guarded_report(8, "Online/offline consistency", [&] { return online_offline(run1 / "c6"); });
  guarded_report(9, "Real-time error shape", [&] {
    fs::create_directories(run1 / "c9");
    for (const auto& e : fs::directory_iterator(run1 / "c6"))
      fs::copy(e.path(), run1 / "c9" / e.path().filename());
    return error_shape(run1 / "c9");
  });
  guarded_report(10, "Determinism", [&] { return determinism(run1, run2); });

  emit(std::to_string(failures) + " criterion(s) failed");
  std::cout << "report: " << (work / "acceptance_report.txt").string() << std::endl;
  return report_only || failures == 0 ? 0 : 1;
}
