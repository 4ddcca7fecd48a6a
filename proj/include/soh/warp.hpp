#pragma once

#include "soh/dataset.hpp"

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

namespace soh {

/// Monotone, continuous alignment between a reference and a target sequence.
/// Indices are zero-based: the path runs from (0, 0) to (K_ref - 1, K_target - 1).
struct WarpPath {
  std::vector<std::pair<int, int>> pairs;  // (ref_index, target_index)

  std::size_t size() const { return pairs.size(); }
  bool operator==(const WarpPath&) const = default;
};

/// True when `path` satisfies the boundary, monotonicity and unit-step conditions.
bool is_valid_path(const WarpPath& path, int ref_length, int target_length);

enum class LocalCost { euclidean, squared_euclidean };

struct DtwResult {
  WarpPath path;
  double distance = 0.0;
};

/// Classic DTW over all monotone continuous paths. Columns are time steps.
/// Ties prefer the diagonal predecessor, then a reference advance, then a target advance.
DtwResult dtw_align(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& target,
                    LocalCost cost = LocalCost::euclidean);

struct EdtwOptions {
  int components = 2;  // M, rank of the spatial projections (1 <= M <= J)
  double tol = 0.01;
  int max_iter = 50;
  double energy_weight = 1.0;
  double ridge = 1e-6;  // relative Tikhonov term added to the warped Gram matrices
};

struct EdtwSolution {
  WarpPath path;
  Eigen::MatrixXd v_ref;     // J x M
  Eigen::MatrixXd v_target;  // J x M
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations_used = 0;
  double alignment_cost = 0.0;
  double energy_penalty = 0.0;
};

/// Alternates DTW on the projected sequences with a canonical-correlation update
/// of the projections. The objective is the squared alignment residual in the
/// projected space plus the energy-discrepancy penalty; a sweep that would raise
/// it is rejected, so the recorded trace never increases.
EdtwSolution edtw_solve(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& target,
                        const EdtwOptions& options = {});

/// Regularised, centred Gram matrix of one side of a warped pair; the metric
/// under which the solution's projections are orthonormal.
Eigen::MatrixXd warped_gram(const Eigen::MatrixXd& seq, const WarpPath& path, bool reference_side,
                            double ridge);

/// Mean second-moment matrix X X^T / K (per-sample energy of a sequence).
Eigen::MatrixXd energy_gram(const Eigen::MatrixXd& seq);

/// |‖G_sync‖_F − ‖G_orig‖_F| / ‖G_orig‖_F with G = energy_gram.
double relative_energy_error(const Eigen::MatrixXd& original, const Eigen::MatrixXd& synced);

/// Target columns paired with each reference index are averaged.
Eigen::MatrixXd synchronize_cycle(const WarpPath& path, const Eigen::MatrixXd& target,
                                  int ref_length);

/// For every target step, the last reference index it is paired with.
std::vector<int> target_to_reference(const WarpPath& path, int target_length);

struct SyncedBattery {
  std::string source;
  int reference_length = 0;
  int ref_cycle = 0;  // cycle_index of the reference cycle
  std::vector<int> cycle_indices;
  std::vector<double> capacities;
  std::vector<Eigen::MatrixXd> synced;  // C slices of J x K_ref
  std::vector<double> per_cycle_energy_error;
  std::vector<int> iterations;
  std::vector<bool> converged;
  double noise_bound = 0.0;

  std::size_t size() const { return synced.size(); }

  /// Synchronised voltage of every cycle never rises by more than noise_bound.
  bool voltage_monotone() const;
};

/// Aligns every cycle of `record` to `reference`. Cycles are processed in
/// parallel and assembled in record order.
SyncedBattery synchronize_to_reference(const BatteryRecord& record,
                                       const CycleTrajectory& reference,
                                       const EdtwOptions& options = {},
                                       double noise_bound = 0.0, unsigned threads = 0);

/// Aligns every cycle to the record's cycle with cycle_index == ref_cycle.
SyncedBattery synchronize_battery(const BatteryRecord& record, int ref_cycle,
                                  const EdtwOptions& options = {}, double noise_bound = 0.0,
                                  unsigned threads = 0);

struct SequenceSync {
  WarpPath path;
  Eigen::MatrixXd synced;  // J x K_ref
  int iterations = 0;
  bool converged = true;
};

/// Synchronises a single sequence exactly as synchronize_to_reference does. A
/// target bitwise equal to the reference maps to itself through the diagonal.
SequenceSync synchronize_sequence(const Eigen::MatrixXd& reference,
                                  const Eigen::MatrixXd& target, const EdtwOptions& options);

}  // namespace soh
