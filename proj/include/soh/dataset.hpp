#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace soh {

/// Row indices of the per-cycle sample matrix.
enum Variable : int { kVoltage = 0, kTemperature = 1 };
inline constexpr int kNumVariables = 2;

/// One discharge cycle: J x K matrix, one column per sampling instant.
struct CycleTrajectory {
  int cycle_index = 0;
  Eigen::MatrixXd samples;
  double sample_period = 1.0;

  Eigen::Index length() const { return samples.cols(); }
  Eigen::Index variables() const { return samples.rows(); }
};

struct BatteryRecord {
  std::string battery_id;
  std::vector<CycleTrajectory> cycles;
  std::vector<double> capacities;  // Ah, one per cycle
  double nominal_capacity = 1.1;

  std::size_t size() const { return cycles.size(); }
};

/// Throws soh::Error if any record invariant is violated.
void validate(const CycleTrajectory& cycle);
void validate(const BatteryRecord& record);

/// Reads `cycle,t,voltage,temperature` and `cycle,capacity_ah` CSV files.
BatteryRecord parse_battery(const std::filesystem::path& cycles_csv,
                            const std::filesystem::path& labels_csv,
                            double nominal_capacity = 1.1);

/// Writes the two CSV files parse_battery reads. Values use round-trip precision.
void write_battery(const BatteryRecord& record, const std::filesystem::path& cycles_csv,
                   const std::filesystem::path& labels_csv);

struct SyntheticConfig {
  int cycles = 200;
  int base_length = 300;
  double nominal_capacity = 1.1;
  /// capacity_c = nominal * (1 - fade_alpha * (c / cycles)^fade_beta)
  double fade_alpha = 0.35;
  double fade_beta = 2.0;
  /// Discharge length shrinks in proportion to lost capacity (1 = constant-current physics).
  double length_sensitivity = 1.0;
  /// Multiplies the base noise standard deviations (2 mV, 0.05 degC); 0 disables noise.
  double noise_level = 1.0;
  double sample_period = 10.0;
  std::string battery_id = "synthetic";

  void validate() const;
};

/// Gaussian noise is clipped at three standard deviations, so every sample lies
/// within this distance of its noiseless value.
double synthetic_voltage_noise_bound(const SyntheticConfig& config);

BatteryRecord generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

struct SplitSpec {
  int degradation_start_cycle = 1;  // cycle_index of the first usable cycle
  double train_fraction = 0.7;
};

struct Split {
  BatteryRecord train;
  BatteryRecord test;
  std::size_t excluded = 0;
};

Split split(const BatteryRecord& record, const SplitSpec& spec);

/// Copy of the record restricted to positions [first, last).
BatteryRecord slice(const BatteryRecord& record, std::size_t first, std::size_t last);

}  // namespace soh
