#include "soh/importance.hpp"

#include "soh/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace soh {

std::vector<double> importance_profile(const SyncedBattery& synced) {
  const std::size_t cycles = synced.size();
  if (cycles < 2) throw Error(Errc::input, "importance: need at least 2 cycles");
  const int length = synced.reference_length;
  const Eigen::Index variables = synced.synced.front().rows();

  std::vector<double> trace(static_cast<std::size_t>(length), 0.0);
  Eigen::MatrixXd slice(static_cast<Eigen::Index>(cycles), variables);
  for (int k = 0; k < length; ++k) {
    for (std::size_t c = 0; c < cycles; ++c)
      slice.row(static_cast<Eigen::Index>(c)) = synced.synced[c].col(k).transpose();
    const Eigen::MatrixXd centred = slice.rowwise() - slice.colwise().mean();
    // trace(X^T X) of the centred slice
    trace[static_cast<std::size_t>(k)] = centred.squaredNorm();
  }
  const double peak = *std::max_element(trace.begin(), trace.end());
  if (!(peak > 0.0)) throw Error(Errc::degenerate_data, "importance: every slice has zero variance");
  for (auto& t : trace) t /= peak;
  return trace;
}

int detect_knee(std::span<const double> curve) {
  const auto n = curve.size();
  if (n < 3) throw Error(Errc::input, "knee: need at least 3 points");
  const auto [lo, hi] = std::minmax_element(curve.begin(), curve.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) throw Error(Errc::knee_not_found, "knee: flat curve");

  const double y0 = (curve.front() - *lo) / range;
  const double y1 = (curve.back() - *lo) / range;
  const double rise = y1 - y0;
  const double norm = std::sqrt(1.0 + rise * rise);
  std::vector<double> dist(n);
  double global = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = static_cast<double>(k) / static_cast<double>(n - 1);
    const double y = (curve[k] - *lo) / range;
    dist[k] = (y - y0 - rise * x) / norm;
    global = std::max(global, std::abs(dist[k]));
  }
  if (global < 1e-9) throw Error(Errc::knee_not_found, "knee: curve is a straight line");

  // Lobes are maximal runs of one sign; ones far below the global peak are noise.
  const double significant = 0.05 * global;
  std::size_t k = 1;
  while (k + 1 < n) {
    if (std::abs(dist[k]) < 1e-12) {
      ++k;
      continue;
    }
    const bool positive = dist[k] > 0.0;
    std::size_t best = k;
    std::size_t j = k;
    for (; j + 1 < n && std::abs(dist[j]) >= 1e-12 && (dist[j] > 0.0) == positive; ++j)
      if (std::abs(dist[j]) > std::abs(dist[best])) best = j;
    if (std::abs(dist[best]) >= significant) return static_cast<int>(best);
    k = j;
  }
  throw Error(Errc::knee_not_found, "knee: no significant deviation from the chord");
}

Knee detect_knee_threshold(const SyncedBattery& synced, std::span<const double> scores) {
  if (synced.size() == 0) throw Error(Errc::input, "knee: no cycles");
  if (scores.size() != static_cast<std::size_t>(synced.reference_length))
    throw Error(Errc::input, "knee: score length differs from reference length");
  std::vector<double> mean(static_cast<std::size_t>(synced.reference_length), 0.0);
  for (const auto& slice : synced.synced)
    for (int k = 0; k < synced.reference_length; ++k) mean[static_cast<std::size_t>(k)] += slice(kVoltage, k);
  for (auto& v : mean) v /= static_cast<double>(synced.size());

  Knee knee;
  knee.index = detect_knee(mean);
  // A zero score would admit every step; keep the threshold strictly positive.
  knee.threshold = std::max(scores[static_cast<std::size_t>(knee.index)],
                            std::numeric_limits<double>::min());
  return knee;
}

Interval select_important(std::span<const double> scores, double threshold) {
  if (scores.empty()) throw Error(Errc::input, "select_important: empty profile");
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw Error(Errc::config, "select_important: threshold must be in (0, 1]");
  const auto peak = static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  Interval out{peak, peak};
  while (out.start > 0 && scores[static_cast<std::size_t>(out.start - 1)] >= threshold) --out.start;
  while (out.end + 1 < static_cast<int>(scores.size()) &&
         scores[static_cast<std::size_t>(out.end + 1)] >= threshold)
    ++out.end;
  return out;
}

ImportanceProfile analyse_importance(const SyncedBattery& synced) {
  ImportanceProfile profile;
  profile.scores = importance_profile(synced);
  const auto knee = detect_knee_threshold(synced, profile.scores);
  profile.knee_index = knee.index;
  profile.threshold = knee.threshold;
  profile.interval = select_important(profile.scores, knee.threshold);
  return profile;
}

std::uint64_t GridSpec::hash(const Interval& interval) const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint64_t>(grids_per_variable));
  mix(ranges.size());
  for (const auto& [lo, hi] : ranges) {
    mix(std::bit_cast<std::uint64_t>(lo));
    mix(std::bit_cast<std::uint64_t>(hi));
  }
  mix(static_cast<std::uint64_t>(interval.start));
  mix(static_cast<std::uint64_t>(interval.end));
  return h;
}

void GridSpec::validate() const {
  if (grids_per_variable < 2) throw Error(Errc::config, "grid: need at least 2 grids per variable");
  if (grids_per_variable > 65535) throw Error(Errc::config, "grid: too many grids per variable");
  if (ranges.empty()) throw Error(Errc::config, "grid: no variables");
  for (const auto& [lo, hi] : ranges)
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw Error(Errc::config, "grid: each range needs V_min < V_max");
}

GridSpec fit_grid(const SyncedBattery& synced_train, const Interval& interval, int grids) {
  if (grids < 2) throw Error(Errc::config, "grid: need at least 2 grids per variable");
  if (synced_train.size() == 0) throw Error(Errc::input, "grid: no training cycles");
  if (interval.start < 0 || interval.end >= synced_train.reference_length ||
      interval.start > interval.end)
    throw Error(Errc::input, "grid: interval outside the synchronised length");

  const Eigen::Index variables = synced_train.synced.front().rows();
  GridSpec spec;
  spec.grids_per_variable = grids;
  for (Eigen::Index j = 0; j < variables; ++j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& slice : synced_train.synced) {
      const auto seg = slice.row(j).segment(interval.start, interval.length());
      lo = std::min(lo, seg.minCoeff());
      hi = std::max(hi, seg.maxCoeff());
    }
    if (!(hi > lo))
      throw Error(Errc::degenerate_data, "grid: variable " + std::to_string(j) + " is constant");
    spec.ranges.emplace_back(lo, hi + 1e-9);
  }
  return spec;
}

int grid_bin(double value, const std::pair<double, double>& range, int grids) {
  const double scaled = (value - range.first) * grids / (range.second - range.first);
  if (!(scaled >= 0.0)) return 0;  // also catches NaN
  if (scaled >= grids) return grids - 1;
  return std::min(static_cast<int>(std::floor(scaled)), grids - 1);
}

Eigen::MatrixXd EncodedCycle::dense() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows(), steps());
  for (int t = 0; t < steps(); ++t)
    for (int j = 0; j < variables; ++j) out(active_row(t, j), t) = 1.0;
  return out;
}

EncodedCycle grid_encode(const Eigen::MatrixXd& cycle_synced, const Interval& interval,
                         const GridSpec& spec) {
  spec.validate();
  if (cycle_synced.rows() != spec.variables())
    throw Error(Errc::model_input, "encode: variable count differs from grid spec");
  if (interval.start < 0 || interval.end >= cycle_synced.cols() || interval.start > interval.end)
    throw Error(Errc::model_input, "encode: interval outside the cycle");

  EncodedCycle enc;
  enc.variables = spec.variables();
  enc.grids = spec.grids_per_variable;
  enc.interval = interval;
  enc.bins.resize(static_cast<std::size_t>(interval.length() * enc.variables));
  for (int t = 0; t < interval.length(); ++t)
    for (int j = 0; j < enc.variables; ++j)
      enc.bins[static_cast<std::size_t>(t * enc.variables + j)] = static_cast<std::uint16_t>(
          grid_bin(cycle_synced(j, interval.start + t), spec.ranges[static_cast<std::size_t>(j)],
                   spec.grids_per_variable));
  return enc;
}

}  // namespace soh
