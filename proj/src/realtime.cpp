#include "soh/realtime.hpp"

#include "soh/error.hpp"

#include <cmath>
#include <limits>

namespace soh {

ZScale ZScale::unit(int variables) {
  return {Eigen::VectorXd::Zero(variables), Eigen::VectorXd::Ones(variables)};
}

ZScale ZScale::fit(const BatteryRecord& record) {
  if (record.cycles.empty()) throw Error(Errc::input, "zscale: empty record");
  const Eigen::Index j = record.cycles.front().variables();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(j);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(j);
  double count = 0.0;
  for (const auto& c : record.cycles) {
    sum += c.samples.rowwise().sum();
    count += static_cast<double>(c.length());
  }
  const Eigen::VectorXd mean = sum / count;
  for (const auto& c : record.cycles) sq += (c.samples.colwise() - mean).rowwise().squaredNorm();
  Eigen::VectorXd sd = (sq / count).cwiseSqrt();
  for (Eigen::Index i = 0; i < j; ++i)
    if (!(sd(i) > 0.0)) sd(i) = 1.0;
  return {mean, sd};
}

std::optional<double> prefix_similarity(const OnlinePrefix& prefix,
                                        const CycleTrajectory& candidate, const ZScale& scale) {
  const Eigen::Index k = prefix.samples.cols();
  if (candidate.length() < k) return std::nullopt;
  const Eigen::MatrixXd diff =
      (prefix.samples - candidate.samples.leftCols(k)).array().colwise() / scale.stddev.array();
  return diff.norm();
}

ReconstructedCycle match_and_reconstruct(const OnlinePrefix& prefix,
                                         const BatteryRecord& training, const ZScale& scale) {
  const CycleTrajectory* best = nullptr;
  double best_s = std::numeric_limits<double>::infinity();
  for (const auto& cycle : training.cycles) {
    const auto s = prefix_similarity(prefix, cycle, scale);
    if (s && *s < best_s) {
      best_s = *s;
      best = &cycle;
    }
  }
  if (best == nullptr)
    throw Error(Errc::match_exhausted, "no training cycle is at least " +
                                           std::to_string(prefix.step()) + " steps long");
  const Eigen::Index k = prefix.samples.cols();
  ReconstructedCycle out;
  out.matched_cycle = best->cycle_index;
  out.similarity = best_s;
  out.samples.resize(prefix.samples.rows(), best->length());
  out.samples.leftCols(k) = prefix.samples;
  out.samples.rightCols(best->length() - k) = best->samples.rightCols(best->length() - k);
  return out;
}

OnlineSession OnlineSession::build(BatteryRecord training, CycleTrajectory reference,
                                   const EdtwOptions& edtw, GridSpec grid,
                                   ImportanceProfile importance, ModelParameters model) {
  if (training.cycles.empty()) throw Error(Errc::input, "session: empty training record");
  grid.validate();
  model.validate();
  if (model.grid_hash != grid.hash(importance.interval))
    throw Error(Errc::model_input, "session: model grid hash does not match the grid spec");
  if (model.input_dim != grid.rows())
    throw Error(Errc::model_input, "session: model input size does not match the grid spec");
  if (importance.interval.end >= reference.length())
    throw Error(Errc::input, "session: important interval exceeds the reference length");
  OnlineSession s;
  s.scale = ZScale::fit(training);
  s.training = std::move(training);
  s.reference = std::move(reference);
  s.edtw = edtw;
  s.grid = std::move(grid);
  s.importance = std::move(importance);
  s.model = std::move(model);
  return s;
}

RealtimeEstimate estimate_at(const OnlinePrefix& prefix, const OnlineSession& session) {
  RealtimeEstimate est;
  est.step = prefix.step();
  if (prefix.step() < 1) throw Error(Errc::input, "estimate: empty prefix");
  if (prefix.samples.rows() != session.reference.variables())
    throw Error(Errc::input, "estimate: prefix has the wrong number of variables");
  if (!prefix.samples.allFinite()) throw Error(Errc::input, "estimate: non-finite prefix sample");

  const auto recon = match_and_reconstruct(prefix, session.training, session.scale);
  est.matched_cycle = recon.matched_cycle;
  SequenceSync sync;
  try {
    sync = synchronize_sequence(session.reference.samples, recon.samples, session.edtw);
  } catch (const Error& e) {
    throw Error(e.code(), "step " + std::to_string(est.step) + ": " + e.what());
  }
  const auto encoded = grid_encode(sync.synced, session.importance.interval, session.grid);
  est.capacity = forward(session.model, encoded);
  const auto mapping = target_to_reference(sync.path, static_cast<int>(recon.samples.cols()));
  est.in_important_interval =
      session.importance.interval.contains(mapping[static_cast<std::size_t>(est.step - 1)]);
  return est;
}

double offline_estimate(const Eigen::MatrixXd& cycle, const OnlineSession& session) {
  const auto sync = synchronize_sequence(session.reference.samples, cycle, session.edtw);
  return forward(session.model, grid_encode(sync.synced, session.importance.interval, session.grid));
}

std::vector<RealtimeEstimate> stream_cycle(const CycleTrajectory& cycle,
                                           const OnlineSession& session) {
  std::vector<RealtimeEstimate> out;
  out.reserve(static_cast<std::size_t>(cycle.length()));
  for (Eigen::Index k = 1; k <= cycle.length(); ++k) {
    const OnlinePrefix prefix{cycle.samples.leftCols(k)};
    try {
      out.push_back(estimate_at(prefix, session));
    } catch (const Error& e) {
      RealtimeEstimate failed;
      failed.step = static_cast<int>(k);
      failed.capacity = std::numeric_limits<double>::quiet_NaN();
      failed.error = std::string(errc_name(e.code())) + ": " + e.what();
      out.push_back(std::move(failed));
    }
  }
  return out;
}

}  // namespace soh
