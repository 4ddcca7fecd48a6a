#include "soh/pipeline.hpp"

#include "detail/text.hpp"
#include "soh/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace soh {

namespace fs = std::filesystem;
using detail::format_double;

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  if constexpr (std::is_floating_point_v<T>) {
    if (const auto v = detail::to_double(value)) return static_cast<T>(*v);
  } else {
    if (const auto v = detail::to_integer(value); v && *v >= 0) return static_cast<T>(*v);
  }
  throw Error(Errc::config, "config: bad value '" + std::string(value) + "' for " +
                                std::string(key));
}

using Setter = std::function<void(PipelineConfig&, std::string_view, std::string_view)>;

template <typename T, typename Get>
Setter number(Get get) {
  return [get](PipelineConfig& c, std::string_view k, std::string_view v) {
    get(c) = parse_number<T>(k, v);
  };
}

template <typename Get>
Setter path(Get get) {
  return [get](PipelineConfig& c, std::string_view, std::string_view v) { get(c) = fs::path(v); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"cycles", path([](auto& c) -> auto& { return c.cycles; })},
      {"labels", path([](auto& c) -> auto& { return c.labels; })},
      {"test_cycles", path([](auto& c) -> auto& { return c.test_cycles; })},
      {"test_labels", path([](auto& c) -> auto& { return c.test_labels; })},
      {"model", path([](auto& c) -> auto& { return c.model; })},
      {"out_dir", path([](auto& c) -> auto& { return c.out_dir; })},
      {"nominal_capacity", number<double>([](auto& c) -> auto& { return c.nominal_capacity; })},
      {"ref_cycle", number<int>([](auto& c) -> auto& { return c.ref_cycle; })},
      {"seed", number<std::uint64_t>([](auto& c) -> auto& { return c.seed; })},
      {"threads", number<unsigned>([](auto& c) -> auto& { return c.threads; })},
      {"grids", number<int>([](auto& c) -> auto& { return c.grids; })},
      {"edtw.components", number<int>([](auto& c) -> auto& { return c.edtw.components; })},
      {"edtw.tol", number<double>([](auto& c) -> auto& { return c.edtw.tol; })},
      {"edtw.max_iter", number<int>([](auto& c) -> auto& { return c.edtw.max_iter; })},
      {"edtw.energy_weight", number<double>([](auto& c) -> auto& { return c.edtw.energy_weight; })},
      {"edtw.ridge", number<double>([](auto& c) -> auto& { return c.edtw.ridge; })},
      {"split.degradation_start_cycle",
       number<int>([](auto& c) -> auto& { return c.split.degradation_start_cycle; })},
      {"split.train_fraction", number<double>([](auto& c) -> auto& { return c.split.train_fraction; })},
      {"train.learning_rate", number<double>([](auto& c) -> auto& { return c.train.learning_rate; })},
      {"train.max_epochs", number<int>([](auto& c) -> auto& { return c.train.max_epochs; })},
      {"train.batch_size", number<int>([](auto& c) -> auto& { return c.train.batch_size; })},
      {"train.early_stop_patience",
       number<int>([](auto& c) -> auto& { return c.train.early_stop_patience; })},
      {"train.validation_fraction",
       number<double>([](auto& c) -> auto& { return c.train.validation_fraction; })},
      {"synth.cycles", number<int>([](auto& c) -> auto& { return c.synthetic.cycles; })},
      {"synth.base_length", number<int>([](auto& c) -> auto& { return c.synthetic.base_length; })},
      {"synth.fade_alpha", number<double>([](auto& c) -> auto& { return c.synthetic.fade_alpha; })},
      {"synth.fade_beta", number<double>([](auto& c) -> auto& { return c.synthetic.fade_beta; })},
      {"synth.length_sensitivity",
       number<double>([](auto& c) -> auto& { return c.synthetic.length_sensitivity; })},
      {"synth.noise_level", number<double>([](auto& c) -> auto& { return c.synthetic.noise_level; })},
      {"stream.from", number<int>([](auto& c) -> auto& { return c.stream_from; })},
      {"stream.every", number<int>([](auto& c) -> auto& { return c.stream_every; })},
  };
  return table;
}

void require_file(const fs::path& file, const std::string& reason) {
  if (!fs::is_regular_file(file))
    throw CommandError(2, reason, "file not found: " + file.string());
}

BatteryRecord load_record(const fs::path& cycles, const fs::path& labels, double nominal) {
  require_file(cycles, "cycles-not-found");
  require_file(labels, "labels-not-found");
  return parse_battery(cycles, labels, nominal);
}

BatteryRecord load_training_battery(const PipelineConfig& config) {
  return load_record(config.cycles_path(), config.labels_path(), config.nominal_capacity);
}

const CycleTrajectory& find_cycle(const BatteryRecord& record, int index) {
  for (const auto& c : record.cycles)
    if (c.cycle_index == index) return c;
  throw CommandError(2, "reference-not-found",
                     "reference cycle " + std::to_string(index) + " is not in the battery");
}

SyncedBattery subset(const SyncedBattery& all, std::size_t first, std::size_t last) {
  SyncedBattery out;
  out.source = all.source;
  out.reference_length = all.reference_length;
  out.ref_cycle = all.ref_cycle;
  out.noise_bound = all.noise_bound;
  for (std::size_t i = first; i < last; ++i) {
    out.cycle_indices.push_back(all.cycle_indices[i]);
    out.capacities.push_back(all.capacities[i]);
    out.synced.push_back(all.synced[i]);
    if (i < all.per_cycle_energy_error.size())
      out.per_cycle_energy_error.push_back(all.per_cycle_energy_error[i]);
    if (i < all.iterations.size()) out.iterations.push_back(all.iterations[i]);
    if (i < all.converged.size()) out.converged.push_back(all.converged[i]);
  }
  return out;
}

struct SplitSynced {
  Split raw;
  SyncedBattery train;
  SyncedBattery test;
};

SplitSynced split_synced(const BatteryRecord& record, const SyncedBattery& synced,
                         const SplitSpec& spec) {
  SplitSynced out;
  out.raw = split(record, spec);
  const std::size_t first = out.raw.excluded;
  const std::size_t mid = first + out.raw.train.size();
  out.train = subset(synced, first, mid);
  out.test = subset(synced, mid, synced.size());
  return out;
}

std::map<std::string, std::string> read_key_values(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());
  std::map<std::string, std::string> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto hash = line.find('#');
    const auto body = detail::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::parse, file.string() + ":" + std::to_string(row) + ": expected key = value");
    out.emplace(std::string(detail::trim(body.substr(0, eq))),
                std::string(detail::trim(body.substr(eq + 1))));
  }
  return out;
}

const std::string& lookup(const std::map<std::string, std::string>& kv, const std::string& key,
                          const fs::path& file) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw Error(Errc::parse, file.string() + ": missing key " + key);
  return it->second;
}

double lookup_double(const std::map<std::string, std::string>& kv, const std::string& key,
                     const fs::path& file) {
  const auto v = detail::to_double(lookup(kv, key, file));
  if (!v) throw Error(Errc::parse, file.string() + ": bad number for " + key);
  return *v;
}

long long lookup_integer(const std::map<std::string, std::string>& kv, const std::string& key,
                         const fs::path& file) {
  const auto v = detail::to_integer(lookup(kv, key, file));
  if (!v) throw Error(Errc::parse, file.string() + ": bad integer for " + key);
  return *v;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

std::vector<LabeledCycle> encode_all(const SyncedBattery& synced, const Interval& interval,
                                     const GridSpec& grid) {
  std::vector<LabeledCycle> out;
  out.reserve(synced.size());
  for (std::size_t i = 0; i < synced.size(); ++i)
    out.push_back({grid_encode(synced.synced[i], interval, grid), synced.capacities[i]});
  return out;
}

struct Encoder {
  ImportanceProfile profile;
  GridSpec grid;
};

Encoder fit_encoder(const SyncedBattery& train, int grids) {
  Encoder e;
  e.profile = analyse_importance(train);
  e.grid = fit_grid(train, e.profile.interval, grids);
  return e;
}

void write_encoder(const Encoder& e, const fs::path& dir) {
  write_importance(e.profile, dir);
  write_grid(e.grid, dir / "grid.txt");
}

/// Held-out cycles: a separate battery synchronised to the training reference,
/// or the test part of the training battery's split.
struct TestSet {
  SyncedBattery synced;
  BatteryRecord raw;
};

TestSet test_set(const PipelineConfig& config, const BatteryRecord& record,
                 const SplitSynced& parts) {
  if (config.test_cycles.empty()) return {parts.test, parts.raw.test};
  auto raw = load_record(config.test_cycles, config.test_labels, config.nominal_capacity);
  const auto& reference = find_cycle(record, config.ref_cycle);
  auto synced = synchronize_to_reference(raw, reference, config.edtw, 0.0, config.threads);
  return {std::move(synced), std::move(raw)};
}

void write_predictions(const ModelParameters& model, const std::vector<LabeledCycle>& set,
                       const std::vector<int>& indices, const char* split_name,
                       std::ostream& out) {
  for (std::size_t i = 0; i < set.size(); ++i)
    out << indices[i] << ',' << split_name << ',' << format_double(set[i].capacity) << ','
        << format_double(forward(model, set[i].encoded)) << '\n';
}

void write_metrics(const fs::path& file, const std::vector<std::pair<std::string, std::string>>& kv) {
  detail::write_atomic(file, [&](std::ostream& out) {
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
  });
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ModelParameters load_checked_model(const PipelineConfig& config, const Encoder& encoder) {
  const auto file = config.model_path();
  if (!fs::is_regular_file(file))
    throw CommandError(4, "model-not-found", "model file not found: " + file.string());
  auto loaded = load_model(file);
  if (loaded.params.grid_hash != encoder.grid.hash(encoder.profile.interval))
    throw CommandError(4, "grid-hash-mismatch",
                       "model was trained against a different grid or interval");
  return std::move(loaded.params);
}

Encoder read_encoder(const PipelineConfig& config) {
  require_file(config.artifact("importance_meta.txt"), "importance-not-found");
  require_file(config.artifact("grid.txt"), "grid-not-found");
  return {read_importance(config.out_dir), read_grid(config.artifact("grid.txt"))};
}

}  // namespace

// ---------------------------------------------------------------------------

void PipelineConfig::set(std::string_view key, std::string_view value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw Error(Errc::config, "config: unknown key " + std::string(key));
  it->second(*this, key, detail::trim(value));
}

void PipelineConfig::load(const fs::path& file) {
  require_file(file, "config-not-found");
  for (const auto& [k, v] : read_key_values(file)) set(k, v);
}

fs::path PipelineConfig::cycles_path() const {
  return cycles.empty() ? artifact("cycles.csv") : cycles;
}
fs::path PipelineConfig::labels_path() const {
  return labels.empty() ? artifact("labels.csv") : labels;
}
fs::path PipelineConfig::model_path() const { return model.empty() ? artifact("model.bin") : model; }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : setters()) out.push_back(k);
  return out;
}

CommandError::CommandError(int exit_code, std::string reason, const std::string& message)
    : std::runtime_error(message), exit_code_(exit_code), reason_(std::move(reason)) {}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::training:
    case Errc::numerical:
      return 3;
    case Errc::load:
    case Errc::model_input:
      return 4;
    default:
      return 2;
  }
}

// ---------------------------------------------------------------------------

void write_synced(const SyncedBattery& synced, const EdtwOptions& options, const fs::path& dir) {
  detail::write_atomic(dir / "synced.csv", [&](std::ostream& out) {
    out << "cycle,k,voltage,temperature\n";
    for (std::size_t i = 0; i < synced.size(); ++i) {
      const auto& m = synced.synced[i];
      for (Eigen::Index k = 0; k < m.cols(); ++k)
        out << synced.cycle_indices[i] << ',' << k + 1 << ',' << format_double(m(kVoltage, k))
            << ',' << format_double(m(kTemperature, k)) << '\n';
    }
  });
  const auto& e = synced.per_cycle_energy_error;
  const auto converged = std::count(synced.converged.begin(), synced.converged.end(), true);
  const int max_iter =
      synced.iterations.empty() ? 0 : *std::max_element(synced.iterations.begin(), synced.iterations.end());
  detail::write_atomic(dir / "sync_meta.txt", [&](std::ostream& out) {
    out << "source = " << synced.source << '\n'
        << "reference_length = " << synced.reference_length << '\n'
        << "ref_cycle = " << synced.ref_cycle << '\n'
        << "cycles = " << synced.size() << '\n'
        << "converged = " << converged << '\n'
        << "max_iterations = " << max_iter << '\n'
        << "components = " << options.components << '\n'
        << "tol = " << format_double(options.tol) << '\n'
        << "max_iter = " << options.max_iter << '\n'
        << "energy_weight = " << format_double(options.energy_weight) << '\n'
        << "ridge = " << format_double(options.ridge) << '\n'
        << "energy_error_p50 = " << format_double(percentile(e, 0.5)) << '\n'
        << "energy_error_p90 = " << format_double(percentile(e, 0.9)) << '\n'
        << "energy_error_max = " << format_double(percentile(e, 1.0)) << '\n';
    for (std::size_t i = 0; i < e.size(); ++i)
      out << "energy_error." << synced.cycle_indices[i] << " = " << format_double(e[i]) << '\n';
  });
}

SyncedBattery read_synced(const fs::path& dir, const BatteryRecord& record) {
  const auto csv = dir / "synced.csv";
  const auto meta_file = dir / "sync_meta.txt";
  require_file(csv, "synced-not-found");
  require_file(meta_file, "synced-not-found");
  const auto meta = read_key_values(meta_file);
  const auto k_ref = lookup_integer(meta, "reference_length", meta_file);

  std::ifstream in(csv);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "cycle,k,voltage,temperature")
    throw Error(Errc::parse, csv.string() + ": unexpected header");
  std::map<long long, Eigen::MatrixXd> by_cycle;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line);
    const auto where = csv.string() + ":" + std::to_string(row);
    if (f.size() != 4) throw Error(Errc::parse, where + ": expected 4 fields");
    const auto c = detail::to_integer(f[0]);
    const auto k = detail::to_integer(f[1]);
    const auto v = detail::to_double(f[2]);
    const auto t = detail::to_double(f[3]);
    if (!c || !k || !v || !t || *k < 1 || *k > k_ref)
      throw Error(Errc::parse, where + ": malformed row");
    auto& m = by_cycle[*c];
    if (m.size() == 0) m = Eigen::MatrixXd::Constant(kNumVariables, k_ref, std::nan(""));
    m(kVoltage, *k - 1) = *v;
    m(kTemperature, *k - 1) = *t;
  }

  SyncedBattery out;
  out.source = record.battery_id;
  out.reference_length = static_cast<int>(k_ref);
  out.ref_cycle = static_cast<int>(lookup_integer(meta, "ref_cycle", meta_file));
  for (std::size_t i = 0; i < record.size(); ++i) {
    const int index = record.cycles[i].cycle_index;
    const auto it = by_cycle.find(index);
    if (it == by_cycle.end())
      throw Error(Errc::input, csv.string() + ": cycle " + std::to_string(index) + " missing");
    if (!it->second.allFinite())
      throw Error(Errc::input, csv.string() + ": cycle " + std::to_string(index) + " incomplete");
    out.cycle_indices.push_back(index);
    out.capacities.push_back(record.capacities[i]);
    out.synced.push_back(std::move(it->second));
    const auto e = meta.find("energy_error." + std::to_string(index));
    out.per_cycle_energy_error.push_back(
        e == meta.end() ? 0.0 : detail::to_double(e->second).value_or(0.0));
  }
  if (by_cycle.size() != record.size())
    throw Error(Errc::input, csv.string() + ": cycles do not match the battery");
  return out;
}

void write_importance(const ImportanceProfile& profile, const fs::path& dir) {
  detail::write_atomic(dir / "importance.csv", [&](std::ostream& out) {
    out << "k,importance\n";
    for (std::size_t k = 0; k < profile.scores.size(); ++k)
      out << k + 1 << ',' << format_double(profile.scores[k]) << '\n';
  });
  detail::write_atomic(dir / "importance_meta.txt", [&](std::ostream& out) {
    out << "# sampling steps are one-based\n"
        << "delta = " << format_double(profile.threshold) << '\n'
        << "knee_k = " << profile.knee_index + 1 << '\n'
        << "interval_start_k = " << profile.interval.start + 1 << '\n'
        << "interval_end_k = " << profile.interval.end + 1 << '\n';
  });
}

ImportanceProfile read_importance(const fs::path& dir) {
  const auto meta_file = dir / "importance_meta.txt";
  const auto meta = read_key_values(meta_file);
  ImportanceProfile p;
  p.threshold = lookup_double(meta, "delta", meta_file);
  p.knee_index = static_cast<int>(lookup_integer(meta, "knee_k", meta_file)) - 1;
  p.interval.start = static_cast<int>(lookup_integer(meta, "interval_start_k", meta_file)) - 1;
  p.interval.end = static_cast<int>(lookup_integer(meta, "interval_end_k", meta_file)) - 1;
  if (p.interval.start < 0 || p.interval.end < p.interval.start)
    throw Error(Errc::parse, meta_file.string() + ": invalid interval");

  const auto csv = dir / "importance.csv";
  std::ifstream in(csv);
  std::string line;
  if (in && std::getline(in, line)) {
    while (std::getline(in, line)) {
      const auto f = detail::split_fields(line);
      if (f.size() != 2) continue;
      if (const auto v = detail::to_double(f[1])) p.scores.push_back(*v);
    }
  }
  return p;
}

void write_grid(const GridSpec& grid, const fs::path& file) {
  detail::write_atomic(file, [&](std::ostream& out) {
    out << "grids = " << grid.grids_per_variable << '\n'
        << "variables = " << grid.variables() << '\n';
    for (int j = 0; j < grid.variables(); ++j)
      out << "min." << j << " = " << format_double(grid.ranges[j].first) << '\n'
          << "max." << j << " = " << format_double(grid.ranges[j].second) << '\n';
  });
}

GridSpec read_grid(const fs::path& file) {
  const auto kv = read_key_values(file);
  GridSpec g;
  g.grids_per_variable = static_cast<int>(lookup_integer(kv, "grids", file));
  const auto vars = lookup_integer(kv, "variables", file);
  for (long long j = 0; j < vars; ++j)
    g.ranges.emplace_back(lookup_double(kv, "min." + std::to_string(j), file),
                          lookup_double(kv, "max." + std::to_string(j), file));
  g.validate();
  return g;
}

void write_stream(const std::vector<RealtimeEstimate>& estimates, int cycle_index,
                  std::optional<double> truth, const fs::path& file) {
  detail::write_atomic(file, [&](std::ostream& out) {
    out << "k,estimate_ah,matched_cycle,in_important_interval\n";
    for (const auto& e : estimates)
      out << e.step << ',' << (e.error ? std::string("nan") : format_double(e.capacity)) << ','
          << e.matched_cycle << ',' << (e.in_important_interval ? 1 : 0) << '\n';
    out << "# cycle = " << cycle_index;
    if (truth) out << ", truth_ah = " << format_double(*truth);
    if (!estimates.empty() && !estimates.back().error)
      out << ", final_estimate_ah = " << format_double(estimates.back().capacity);
    const auto failed = std::count_if(estimates.begin(), estimates.end(),
                                      [](const auto& e) { return e.error.has_value(); });
    out << ", failed_steps = " << failed << '\n';
  });
}

// ---------------------------------------------------------------------------

void cmd_synth(const PipelineConfig& config, std::ostream& log) {
  SyntheticConfig sc = config.synthetic;
  sc.nominal_capacity = config.nominal_capacity;
  const auto record = generate_synthetic(sc, config.seed);
  fs::create_directories(config.out_dir);
  write_battery(record, config.cycles_path(), config.labels_path());
  log << "synth: " << record.size() << " cycles, lengths " << record.cycles.front().length()
      << ".." << record.cycles.back().length() << ", capacity "
      << format_double(record.capacities.front()) << ".." << format_double(record.capacities.back())
      << " Ah -> " << config.cycles_path().string() << '\n';
}

void cmd_ingest(const PipelineConfig& config, std::ostream& log) {
  const auto record = load_training_battery(config);
  const auto parts = split(record, config.split);
  Eigen::Index kmin = record.cycles.front().length(), kmax = kmin;
  for (const auto& c : record.cycles) {
    kmin = std::min(kmin, c.length());
    kmax = std::max(kmax, c.length());
  }
  fs::create_directories(config.out_dir);
  write_metrics(config.artifact("ingest.txt"),
                {{"battery", record.battery_id},
                 {"cycles", std::to_string(record.size())},
                 {"first_cycle", std::to_string(record.cycles.front().cycle_index)},
                 {"last_cycle", std::to_string(record.cycles.back().cycle_index)},
                 {"min_length", std::to_string(kmin)},
                 {"max_length", std::to_string(kmax)},
                 {"excluded_cycles", std::to_string(parts.excluded)},
                 {"train_cycles", std::to_string(parts.train.size())},
                 {"test_cycles", std::to_string(parts.test.size())}});
  log << "ingest: " << record.size() << " cycles (" << record.battery_id << "), lengths " << kmin
      << ".." << kmax << ", split " << parts.train.size() << " train / " << parts.test.size()
      << " test\n";
}

void cmd_sync(const PipelineConfig& config, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto record = load_training_battery(config);
  find_cycle(record, config.ref_cycle);
  const auto synced =
      synchronize_battery(record, config.ref_cycle, config.edtw, 0.0, config.threads);
  fs::create_directories(config.out_dir);
  write_synced(synced, config.edtw, config.out_dir);
  const auto& e = synced.per_cycle_energy_error;
  log << "sync: K_ref = " << synced.reference_length << ", converged "
      << std::count(synced.converged.begin(), synced.converged.end(), true) << "/" << synced.size()
      << ", energy error p50 " << format_double(percentile(e, 0.5)) << " p90 "
      << format_double(percentile(e, 0.9)) << " max " << format_double(percentile(e, 1.0))
      << " (" << seconds_since(t0) << " s)\n";
}

void cmd_importance(const PipelineConfig& config, std::ostream& log) {
  const auto record = load_training_battery(config);
  const auto parts = split_synced(record, read_synced(config.out_dir, record), config.split);
  const auto enc = fit_encoder(parts.train, config.grids);
  write_encoder(enc, config.out_dir);
  log << "importance: knee k = " << enc.profile.knee_index + 1 << ", delta = "
      << format_double(enc.profile.threshold) << ", interval [" << enc.profile.interval.start + 1
      << ", " << enc.profile.interval.end + 1 << "]\n";
}

Metrics cmd_train(const PipelineConfig& config, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto record = load_training_battery(config);
  const auto parts = split_synced(record, read_synced(config.out_dir, record), config.split);
  const auto enc = fit_encoder(parts.train, config.grids);
  write_encoder(enc, config.out_dir);

  const auto train_set = encode_all(parts.train, enc.profile.interval, enc.grid);
  const auto held_out = test_set(config, record, parts);
  const auto test = encode_all(held_out.synced, enc.profile.interval, enc.grid);

  TrainConfig tc = config.train;
  tc.seed = config.seed;
  auto result = train(train_set, tc);
  result.params.grid_hash = enc.grid.hash(enc.profile.interval);
  save_model(result.params, config.model_path());

  const auto& h = result.history;
  detail::write_atomic(config.artifact("history.csv"), [&](std::ostream& out) {
    out << "epoch,train_rmse_ah,validation_rmse_ah\n";
    for (std::size_t i = 0; i < h.train_rmse.size(); ++i)
      out << i + 1 << ',' << format_double(h.train_rmse[i]) << ','
          << (std::isfinite(h.validation_rmse[i]) ? format_double(h.validation_rmse[i]) : "nan")
          << '\n';
  });
  detail::write_atomic(config.artifact("predictions.csv"), [&](std::ostream& out) {
    out << "cycle,split,truth_ah,estimate_ah\n";
    write_predictions(result.params, train_set, parts.train.cycle_indices, "train", out);
    write_predictions(result.params, test, held_out.synced.cycle_indices, "test", out);
  });

  const auto fit = evaluate(result.params, train_set, record.nominal_capacity);
  const auto m = evaluate(result.params, test, record.nominal_capacity);
  write_metrics(config.artifact("metrics.txt"),
                {{"rmse_percent", format_double(m.rmse_percent)},
                 {"r_squared", format_double(m.r_squared)},
                 {"train_rmse_percent", format_double(fit.rmse_percent)},
                 {"train_r_squared", format_double(fit.r_squared)},
                 {"train_cycles", std::to_string(train_set.size())},
                 {"test_cycles", std::to_string(test.size())},
                 {"epochs", std::to_string(h.train_rmse.size())},
                 {"best_epoch", std::to_string(h.best_epoch)}});
  log << "train: " << train_set.size() << " train / " << test.size() << " test cycles, "
      << h.train_rmse.size() << " epochs (best " << h.best_epoch << "), test RMSE "
      << format_double(m.rmse_percent) << " %, R^2 " << format_double(m.r_squared) << " ("
      << seconds_since(t0) << " s)\n";
  return m;
}

Metrics cmd_evaluate(const PipelineConfig& config, std::ostream& log) {
  const auto record = load_training_battery(config);
  const auto parts = split_synced(record, read_synced(config.out_dir, record), config.split);
  const auto enc = read_encoder(config);
  const auto model = load_checked_model(config, enc);
  const auto held_out = test_set(config, record, parts);
  const auto test = encode_all(held_out.synced, enc.profile.interval, enc.grid);
  const auto m = evaluate(model, test, record.nominal_capacity);
  detail::write_atomic(config.artifact("evaluation.csv"), [&](std::ostream& out) {
    out << "cycle,split,truth_ah,estimate_ah\n";
    write_predictions(model, test, held_out.synced.cycle_indices, "test", out);
  });
  write_metrics(config.artifact("evaluation.txt"),
                {{"rmse_percent", format_double(m.rmse_percent)},
                 {"r_squared", format_double(m.r_squared)},
                 {"test_cycles", std::to_string(test.size())}});
  log << "evaluate: " << test.size() << " cycles, RMSE " << format_double(m.rmse_percent)
      << " %, R^2 " << format_double(m.r_squared) << '\n';
  return m;
}

void cmd_stream(const PipelineConfig& config, std::ostream& log) {
  const auto record = load_training_battery(config);
  const auto parts = split(record, config.split);
  const auto enc = read_encoder(config);
  auto model = load_checked_model(config, enc);
  const auto session = OnlineSession::build(parts.train, find_cycle(record, config.ref_cycle),
                                            config.edtw, enc.grid, enc.profile, std::move(model));

  const BatteryRecord source =
      config.test_cycles.empty()
          ? parts.test
          : load_record(config.test_cycles, config.test_labels, config.nominal_capacity);
  const int from = config.stream_from > 0 ? config.stream_from
                   : source.cycles.empty() ? 0
                                           : source.cycles.front().cycle_index;
  std::vector<std::size_t> selected;
  const BatteryRecord& pool = config.stream_from > 0 && config.test_cycles.empty() ? record : source;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const int c = pool.cycles[i].cycle_index;
    if (c == from || (config.stream_every > 0 && c > from && (c - from) % config.stream_every == 0))
      selected.push_back(i);
  }
  if (selected.empty())
    throw CommandError(2, "no-cycles-selected",
                       "no cycle matches stream.from = " + std::to_string(from));

  std::map<int, std::pair<double, int>> by_step;  // k -> (sum |error|, count)
  for (const auto i : selected) {
    const auto& cycle = pool.cycles[i];
    const double truth = pool.capacities[i];
    const auto t0 = std::chrono::steady_clock::now();
    const auto estimates = stream_cycle(cycle, session);
    const auto file = config.artifact("stream_" + std::to_string(cycle.cycle_index) + ".csv");
    write_stream(estimates, cycle.cycle_index, truth, file);
    for (const auto& e : estimates) {
      if (e.error) continue;
      auto& acc = by_step[e.step];
      acc.first += std::abs(e.capacity - truth);
      acc.second += 1;
    }
    log << "stream: cycle " << cycle.cycle_index << ", " << estimates.size()
        << " steps, final estimate "
        << (estimates.back().error ? std::string("nan") : format_double(estimates.back().capacity))
        << " Ah, truth " << format_double(truth) << " Ah (" << seconds_since(t0) << " s) -> "
        << file.string() << '\n';
  }
  detail::write_atomic(config.artifact("stream_error_by_step.csv"), [&](std::ostream& out) {
    out << "k,mean_abs_error_ah,cycles\n";
    for (const auto& [k, acc] : by_step)
      out << k << ',' << format_double(acc.first / acc.second) << ',' << acc.second << '\n';
  });
}

}  // namespace soh
