#pragma once

#include "soh/dataset.hpp"
#include "soh/importance.hpp"
#include "soh/regressor.hpp"
#include "soh/warp.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace soh {

/// Per-variable centre and spread used to make volts and degrees comparable.
struct ZScale {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static ZScale unit(int variables);
  static ZScale fit(const BatteryRecord& record);
};

/// Raw, unsynchronised samples of a cycle observed up to the current step.
struct OnlinePrefix {
  Eigen::MatrixXd samples;  // J x k

  int step() const { return static_cast<int>(samples.cols()); }
};

/// Euclidean distance of the z-scored prefixes; nullopt when the candidate is
/// shorter than the prefix.
std::optional<double> prefix_similarity(const OnlinePrefix& prefix,
                                        const CycleTrajectory& candidate, const ZScale& scale);

struct ReconstructedCycle {
  Eigen::MatrixXd samples;  // prefix followed by the matched cycle's tail
  int matched_cycle = 0;    // cycle_index
  double similarity = 0.0;
};

ReconstructedCycle match_and_reconstruct(const OnlinePrefix& prefix,
                                         const BatteryRecord& training, const ZScale& scale);

/// Offline artefacts frozen for online estimation.
struct OnlineSession {
  BatteryRecord training;
  CycleTrajectory reference;
  EdtwOptions edtw;
  GridSpec grid;
  ImportanceProfile importance;
  ModelParameters model;
  ZScale scale;

  /// Rejects a model whose grid hash does not match `grid` and `importance`.
  static OnlineSession build(BatteryRecord training, CycleTrajectory reference,
                             const EdtwOptions& edtw, GridSpec grid,
                             ImportanceProfile importance, ModelParameters model);
};

struct RealtimeEstimate {
  int step = 0;  // k, one-based
  double capacity = 0.0;
  int matched_cycle = 0;
  bool in_important_interval = false;
  std::optional<std::string> error;
};

RealtimeEstimate estimate_at(const OnlinePrefix& prefix, const OnlineSession& session);

/// End-of-cycle estimate through the offline path (synchronise, slice, encode, forward).
double offline_estimate(const Eigen::MatrixXd& cycle, const OnlineSession& session);

/// One estimate per step k = 1..K. Failures are recorded on the estimate and
/// the stream moves on.
std::vector<RealtimeEstimate> stream_cycle(const CycleTrajectory& cycle,
                                           const OnlineSession& session);

}  // namespace soh
