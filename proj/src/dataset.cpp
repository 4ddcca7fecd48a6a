#include "soh/dataset.hpp"

#include "detail/text.hpp"
#include "soh/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace soh {

namespace {

constexpr double kVoltageNoise = 0.002;     // V
constexpr double kTemperatureNoise = 0.05;  // degC

std::string cycle_tag(int index) { return "cycle " + std::to_string(index); }

}  // namespace

void validate(const CycleTrajectory& cycle) {
  if (cycle.samples.rows() != kNumVariables)
    throw Error(Errc::input, cycle_tag(cycle.cycle_index) + ": expected " +
                                 std::to_string(kNumVariables) + " variables");
  if (cycle.samples.cols() < 2)
    throw Error(Errc::input, cycle_tag(cycle.cycle_index) + ": fewer than 2 samples");
  if (!cycle.samples.allFinite())
    throw Error(Errc::input, cycle_tag(cycle.cycle_index) + ": non-finite sample");
}

void validate(const BatteryRecord& record) {
  if (record.cycles.size() != record.capacities.size())
    throw Error(Errc::input, "cycle and capacity counts differ");
  if (!(record.nominal_capacity > 0.0)) throw Error(Errc::input, "nominal capacity must be > 0");
  for (std::size_t i = 0; i < record.cycles.size(); ++i) {
    validate(record.cycles[i]);
    if (i > 0 && record.cycles[i].cycle_index <= record.cycles[i - 1].cycle_index)
      throw Error(Errc::input, "cycle indices must be strictly increasing");
    const double cap = record.capacities[i];
    if (!(cap > 0.0 && cap < 2.0 * record.nominal_capacity))
      throw Error(Errc::input, cycle_tag(record.cycles[i].cycle_index) +
                                   ": capacity outside (0, 2 x nominal)");
  }
}

BatteryRecord parse_battery(const std::filesystem::path& cycles_csv,
                            const std::filesystem::path& labels_csv, double nominal_capacity) {
  std::ifstream cycles_in(cycles_csv);
  if (!cycles_in) throw Error(Errc::io, "cannot open " + cycles_csv.string());
  std::ifstream labels_in(labels_csv);
  if (!labels_in) throw Error(Errc::io, "cannot open " + labels_csv.string());

  struct Rows {
    std::vector<double> t, voltage, temperature;
  };
  std::map<long long, Rows> by_cycle;

  std::string line;
  std::size_t row = 0;
  if (!std::getline(cycles_in, line) ||
      detail::trim(line) != "cycle,t,voltage,temperature")
    throw Error(Errc::parse, cycles_csv.string() + ": expected header cycle,t,voltage,temperature");
  ++row;
  while (std::getline(cycles_in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    const auto where = cycles_csv.string() + ":" + std::to_string(row);
    if (fields.size() != 4) throw Error(Errc::parse, where + ": expected 4 fields");
    const auto cycle = detail::to_integer(fields[0]);
    const auto t = detail::to_double(fields[1]);
    const auto v = detail::to_double(fields[2]);
    const auto temp = detail::to_double(fields[3]);
    if (!cycle || !t || !v || !temp) throw Error(Errc::parse, where + ": malformed number");
    if (!std::isfinite(*t) || !std::isfinite(*v) || !std::isfinite(*temp))
      throw Error(Errc::parse, where + ": non-finite value");
    if (*cycle < 1) throw Error(Errc::parse, where + ": cycle must be positive");
    auto& rows = by_cycle[*cycle];
    if (!rows.t.empty() && !(*t > rows.t.back()))
      throw Error(Errc::parse, where + ": time not increasing within cycle " +
                                   std::to_string(*cycle));
    rows.t.push_back(*t);
    rows.voltage.push_back(*v);
    rows.temperature.push_back(*temp);
  }

  std::map<long long, double> labels;
  row = 0;
  if (!std::getline(labels_in, line) || detail::trim(line) != "cycle,capacity_ah")
    throw Error(Errc::parse, labels_csv.string() + ": expected header cycle,capacity_ah");
  ++row;
  while (std::getline(labels_in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    const auto where = labels_csv.string() + ":" + std::to_string(row);
    if (fields.size() != 2) throw Error(Errc::parse, where + ": expected 2 fields");
    const auto cycle = detail::to_integer(fields[0]);
    const auto cap = detail::to_double(fields[1]);
    if (!cycle || !cap) throw Error(Errc::parse, where + ": malformed number");
    if (!std::isfinite(*cap)) throw Error(Errc::parse, where + ": non-finite value");
    labels[*cycle] = *cap;
  }

  BatteryRecord record;
  record.battery_id = cycles_csv.stem().string();
  record.nominal_capacity = nominal_capacity;
  for (const auto& [index, rows] : by_cycle) {
    const auto label = labels.find(index);
    if (label == labels.end())
      throw Error(Errc::missing_label, "missing capacity for cycle " + std::to_string(index));
    CycleTrajectory cycle;
    cycle.cycle_index = static_cast<int>(index);
    const auto k = static_cast<Eigen::Index>(rows.t.size());
    cycle.samples.resize(kNumVariables, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      cycle.samples(kVoltage, i) = rows.voltage[i];
      cycle.samples(kTemperature, i) = rows.temperature[i];
    }
    cycle.sample_period = k >= 2 ? (rows.t.back() - rows.t.front()) / static_cast<double>(k - 1)
                                 : 1.0;
    record.cycles.push_back(std::move(cycle));
    record.capacities.push_back(label->second);
  }
  validate(record);
  return record;
}

void write_battery(const BatteryRecord& record, const std::filesystem::path& cycles_csv,
                   const std::filesystem::path& labels_csv) {
  detail::write_atomic(cycles_csv, [&](std::ostream& out) {
    out << "cycle,t,voltage,temperature\n";
    for (const auto& cycle : record.cycles) {
      for (Eigen::Index k = 0; k < cycle.length(); ++k) {
        out << cycle.cycle_index << ','
            << detail::format_double(static_cast<double>(k) * cycle.sample_period) << ','
            << detail::format_double(cycle.samples(kVoltage, k)) << ','
            << detail::format_double(cycle.samples(kTemperature, k)) << '\n';
      }
    }
  });
  detail::write_atomic(labels_csv, [&](std::ostream& out) {
    out << "cycle,capacity_ah\n";
    for (std::size_t i = 0; i < record.cycles.size(); ++i)
      out << record.cycles[i].cycle_index << ',' << detail::format_double(record.capacities[i])
          << '\n';
  });
}

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::config, "synthetic config: " + msg); };
  if (cycles < 10) fail("cycles must be >= 10");
  if (base_length < 50) fail("base_length must be >= 50");
  if (!(nominal_capacity > 0.0)) fail("nominal_capacity must be > 0");
  if (!(fade_alpha > 0.0 && fade_alpha < 1.0)) fail("fade_alpha must be in (0, 1)");
  if (!(fade_beta > 0.0)) fail("fade_beta must be > 0");
  if (!(length_sensitivity >= 0.0 && length_sensitivity <= 1.0))
    fail("length_sensitivity must be in [0, 1]");
  if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) fail("noise_level must be >= 0");
  if (!(sample_period > 0.0)) fail("sample_period must be > 0");
}

double synthetic_voltage_noise_bound(const SyntheticConfig& config) {
  return 3.0 * kVoltageNoise * config.noise_level;
}

BatteryRecord generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto noise = [&](double sigma) {
    if (sigma == 0.0) return 0.0;
    return sigma * std::clamp(gauss(rng), -3.0, 3.0);
  };

  BatteryRecord record;
  record.battery_id = config.battery_id;
  record.nominal_capacity = config.nominal_capacity;
  const double sigma_v = kVoltageNoise * config.noise_level;
  const double sigma_t = kTemperatureNoise * config.noise_level;

  for (int c = 1; c <= config.cycles; ++c) {
    const double fade =
        config.fade_alpha * std::pow(static_cast<double>(c) / config.cycles, config.fade_beta);
    const auto length = std::max<long long>(
        2, std::llround(config.base_length * (1.0 - config.length_sensitivity * fade)));

    // Ageing sags the mid-discharge voltage and steepens the heating flanks.
    const double sag = 0.15 * fade / 0.35;
    const double gain = 0.8 + 4.0 * fade;

    CycleTrajectory cycle;
    cycle.cycle_index = c;
    cycle.sample_period = config.sample_period;
    cycle.samples.resize(kNumVariables, length);
    for (long long k = 0; k < length; ++k) {
      const double s = static_cast<double>(k) / static_cast<double>(length - 1);
      const double v = 3.6 - 0.25 * (1.0 - std::exp(-s / 0.05)) - 0.6 * s -
                       sag * std::sin(std::numbers::pi * s) - 0.8 * std::exp(-(1.0 - s) / 0.04);
      const double t = 30.0 + 10.0 * std::tanh(gain * std::sin(std::numbers::pi * s));
      cycle.samples(kVoltage, k) = v + noise(sigma_v);
      cycle.samples(kTemperature, k) = t + noise(sigma_t);
    }
    record.cycles.push_back(std::move(cycle));
    record.capacities.push_back(config.nominal_capacity * (1.0 - fade));
  }
  return record;
}

BatteryRecord slice(const BatteryRecord& record, std::size_t first, std::size_t last) {
  BatteryRecord out;
  out.battery_id = record.battery_id;
  out.nominal_capacity = record.nominal_capacity;
  last = std::min(last, record.size());
  for (std::size_t i = first; i < last; ++i) {
    out.cycles.push_back(record.cycles[i]);
    out.capacities.push_back(record.capacities[i]);
  }
  return out;
}

Split split(const BatteryRecord& record, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw Error(Errc::split, "train_fraction must be in (0, 1)");
  const auto first_usable = std::find_if(
      record.cycles.begin(), record.cycles.end(),
      [&](const CycleTrajectory& c) { return c.cycle_index >= spec.degradation_start_cycle; });
  const auto excluded = static_cast<std::size_t>(first_usable - record.cycles.begin());
  const std::size_t usable = record.size() - excluded;
  const auto n_train =
      static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(usable) + 1e-9));
  if (n_train == 0) throw Error(Errc::split, "empty train split");
  if (n_train >= usable) throw Error(Errc::split, "empty test split");

  Split out;
  out.excluded = excluded;
  out.train = slice(record, excluded, excluded + n_train);
  out.test = slice(record, excluded + n_train, record.size());
  return out;
}

}  // namespace soh
