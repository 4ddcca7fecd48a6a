#pragma once

#include "soh/warp.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace soh {

/// Inclusive, zero-based range of synchronised time steps.
struct Interval {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool contains(int k) const { return k >= start && k <= end; }
  bool operator==(const Interval&) const = default;
};

struct ImportanceProfile {
  std::vector<double> scores;  // I(k) in [0, 1], max exactly 1
  int knee_index = 0;
  double threshold = 0.0;
  Interval interval;
};

/// I(k) = trace of the centred C x J slice Gram at k, divided by its maximum over k.
std::vector<double> importance_profile(const SyncedBattery& synced);

struct Knee {
  int index = 0;
  double threshold = 0.0;
};

/// First lobe peak of the distance between the cycle-averaged synchronised
/// voltage and its endpoint chord (both axes scaled to [0, 1]).
int detect_knee(std::span<const double> curve);
Knee detect_knee_threshold(const SyncedBattery& synced, std::span<const double> scores);

/// Maximal run of I(k) >= threshold containing the first argmax.
Interval select_important(std::span<const double> scores, double threshold);

ImportanceProfile analyse_importance(const SyncedBattery& synced);

struct GridSpec {
  int grids_per_variable = 200;
  std::vector<std::pair<double, double>> ranges;  // (V_min, V_max) per variable

  int variables() const { return static_cast<int>(ranges.size()); }
  int rows() const { return grids_per_variable * variables(); }
  std::uint64_t hash(const Interval& interval) const;
  void validate() const;
};

GridSpec fit_grid(const SyncedBattery& synced_train, const Interval& interval, int grids = 200);

/// Bin of one value; out-of-range values clamp to the first or last grid.
int grid_bin(double value, const std::pair<double, double>& range, int grids);

/// One-hot grid encoding stored as one bin per (variable, time) pair.
struct EncodedCycle {
  int variables = 0;
  int grids = 0;
  Interval interval;
  std::vector<std::uint16_t> bins;  // bins[t * variables + j]

  int steps() const { return interval.length(); }
  int rows() const { return variables * grids; }
  /// Row of the J*L one-hot matrix set at step t for variable j.
  int active_row(int t, int j) const { return j * grids + bins[t * variables + j]; }
  Eigen::MatrixXd dense() const;
};

EncodedCycle grid_encode(const Eigen::MatrixXd& cycle_synced, const Interval& interval,
                         const GridSpec& spec);

}  // namespace soh
