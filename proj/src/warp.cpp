#include "soh/warp.hpp"

#include "soh/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

namespace soh {

bool is_valid_path(const WarpPath& path, int ref_length, int target_length) {
  if (path.pairs.empty()) return false;
  if (path.pairs.front() != std::pair{0, 0}) return false;
  if (path.pairs.back() != std::pair{ref_length - 1, target_length - 1}) return false;
  for (std::size_t s = 1; s < path.pairs.size(); ++s) {
    const int di = path.pairs[s].first - path.pairs[s - 1].first;
    const int dj = path.pairs[s].second - path.pairs[s - 1].second;
    if (di < 0 || dj < 0 || di > 1 || dj > 1 || di + dj == 0) return false;
  }
  return true;
}

DtwResult dtw_align(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& target, LocalCost cost) {
  if (ref.cols() == 0 || target.cols() == 0) throw Error(Errc::input, "dtw: empty sequence");
  if (ref.rows() != target.rows()) throw Error(Errc::input, "dtw: variable count mismatch");
  if (!ref.allFinite() || !target.allFinite()) throw Error(Errc::input, "dtw: non-finite input");

  const Eigen::Index n = ref.cols();
  const Eigen::Index m = target.cols();
  auto local = [&](Eigen::Index i, Eigen::Index j) {
    const double sq = (ref.col(i) - target.col(j)).squaredNorm();
    return cost == LocalCost::euclidean ? std::sqrt(sq) : sq;
  };

  // 0 = diagonal, 1 = reference advance (from i-1), 2 = target advance (from j-1)
  std::vector<double> acc(static_cast<std::size_t>(n * m));
  std::vector<std::uint8_t> step(static_cast<std::size_t>(n * m));
  auto at = [m](Eigen::Index i, Eigen::Index j) { return static_cast<std::size_t>(i * m + j); };

  constexpr double inf = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double c = local(i, j);
      if (i == 0 && j == 0) {
        acc[at(i, j)] = c;
        continue;
      }
      double best = inf;
      std::uint8_t choice = 0;
      if (i > 0 && j > 0) {
        best = acc[at(i - 1, j - 1)];
        choice = 0;
      }
      if (i > 0 && acc[at(i - 1, j)] < best) {
        best = acc[at(i - 1, j)];
        choice = 1;
      }
      if (j > 0 && acc[at(i, j - 1)] < best) {
        best = acc[at(i, j - 1)];
        choice = 2;
      }
      acc[at(i, j)] = best + c;
      step[at(i, j)] = choice;
    }
  }

  DtwResult result;
  result.distance = acc[at(n - 1, m - 1)];
  Eigen::Index i = n - 1;
  Eigen::Index j = m - 1;
  result.path.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  while (i > 0 || j > 0) {
    switch (step[at(i, j)]) {
      case 0: --i; --j; break;
      case 1: --i; break;
      default: --j; break;
    }
    result.path.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  std::reverse(result.path.pairs.begin(), result.path.pairs.end());
  return result;
}

namespace {

Eigen::MatrixXd gather(const Eigen::MatrixXd& seq, const WarpPath& path, bool reference_side) {
  Eigen::MatrixXd out(seq.rows(), static_cast<Eigen::Index>(path.size()));
  for (std::size_t s = 0; s < path.size(); ++s) {
    const int idx = reference_side ? path.pairs[s].first : path.pairs[s].second;
    out.col(static_cast<Eigen::Index>(s)) = seq.col(idx);
  }
  return out;
}

Eigen::MatrixXd centred(const Eigen::MatrixXd& warped, Eigen::VectorXd& mean) {
  mean = warped.rowwise().mean();
  return warped.colwise() - mean;
}

Eigen::MatrixXd regularised_gram(const Eigen::MatrixXd& centred_seq, double ridge) {
  Eigen::MatrixXd gram = centred_seq * centred_seq.transpose();
  const double trace = gram.trace();
  gram.diagonal().array() += ridge * trace;
  return gram;
}

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& spd, const char* side) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(spd);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0))
    throw Error(Errc::numerical, std::string("edtw: singular warped Gram matrix (") + side + ")");
  return eig.operatorInverseSqrt();
}

struct State {
  WarpPath path;
  Eigen::MatrixXd v_ref, v_target;
  Eigen::VectorXd mean_ref, mean_target;
  double alignment = 0.0;
  double energy = 0.0;

  double objective() const { return alignment + energy; }
};

// Canonical-correlation update of both projections for a fixed path.
void spatial_step(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& target, int components,
                  double ridge, State& st) {
  const Eigen::MatrixXd a = centred(gather(ref, st.path, true), st.mean_ref);
  const Eigen::MatrixXd b = centred(gather(target, st.path, false), st.mean_target);
  const Eigen::MatrixXd w_ref = inverse_sqrt(regularised_gram(a, ridge), "reference");
  const Eigen::MatrixXd w_target = inverse_sqrt(regularised_gram(b, ridge), "target");
  const Eigen::MatrixXd cross = a * b.transpose();
  const Eigen::MatrixXd whitened = w_ref * cross * w_target;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(whitened, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::MatrixXd u = svd.matrixU().leftCols(components);
  Eigen::MatrixXd v = svd.matrixV().leftCols(components);
  for (int c = 0; c < components; ++c) {
    Eigen::Index arg = 0;
    u.col(c).cwiseAbs().maxCoeff(&arg);
    if (u(arg, c) < 0.0) {
      u.col(c) = -u.col(c);
      v.col(c) = -v.col(c);
    }
  }
  st.v_ref = w_ref * u;
  st.v_target = w_target * v;
}

void evaluate_objective(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& target,
                        double energy_ref, double energy_target, double energy_weight,
                        State& st) {
  const Eigen::MatrixXd a = gather(ref, st.path, true);
  const Eigen::MatrixXd b = gather(target, st.path, false);
  const Eigen::MatrixXd residual = st.v_ref.transpose() * (a.colwise() - st.mean_ref) -
                                   st.v_target.transpose() * (b.colwise() - st.mean_target);
  st.alignment = residual.squaredNorm();
  const double dr = energy_gram(a).norm() - energy_ref;
  const double dt = energy_gram(b).norm() - energy_target;
  st.energy = energy_weight * (dr * dr + dt * dt);
}

}  // namespace

Eigen::MatrixXd warped_gram(const Eigen::MatrixXd& seq, const WarpPath& path, bool reference_side,
                            double ridge) {
  Eigen::VectorXd mean;
  return regularised_gram(centred(gather(seq, path, reference_side), mean), ridge);
}

Eigen::MatrixXd energy_gram(const Eigen::MatrixXd& seq) {
  return seq * seq.transpose() / static_cast<double>(seq.cols());
}

double relative_energy_error(const Eigen::MatrixXd& original, const Eigen::MatrixXd& synced) {
  const double base = energy_gram(original).norm();
  if (base == 0.0) return 0.0;
  return std::abs(energy_gram(synced).norm() - base) / base;
}

EdtwSolution edtw_solve(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& target,
                        const EdtwOptions& options) {
  const auto variables = static_cast<int>(ref.rows());
  if (target.rows() != ref.rows()) throw Error(Errc::input, "edtw: variable count mismatch");
  if (ref.cols() == 0 || target.cols() == 0) throw Error(Errc::input, "edtw: empty sequence");
  if (!ref.allFinite() || !target.allFinite()) throw Error(Errc::input, "edtw: non-finite input");
  if (options.components < 1 || options.components > variables)
    throw Error(Errc::config, "edtw: components must be in [1, J]");
  if (!(options.tol > 0.0)) throw Error(Errc::config, "edtw: tol must be > 0");
  if (options.max_iter < 1) throw Error(Errc::config, "edtw: max_iter must be >= 1");
  if (!(options.energy_weight >= 0.0)) throw Error(Errc::config, "edtw: energy_weight must be >= 0");
  if (!(options.ridge >= 0.0)) throw Error(Errc::config, "edtw: ridge must be >= 0");

  const double energy_ref = energy_gram(ref).norm();
  const double energy_target = energy_gram(target).norm();

  // Projections start at the identity and the first alignment runs on the raw data.
  State current;
  current.v_ref = Eigen::MatrixXd::Identity(variables, options.components);
  current.v_target = current.v_ref;
  current.mean_ref = Eigen::VectorXd::Zero(variables);
  current.mean_target = Eigen::VectorXd::Zero(variables);

  EdtwSolution sol;
  bool have_accepted = false;
  for (int it = 1; it <= options.max_iter; ++it) {
    sol.iterations_used = it;
    State next;
    const Eigen::MatrixXd proj_ref =
        current.v_ref.transpose() * (ref.colwise() - current.mean_ref);
    const Eigen::MatrixXd proj_target =
        current.v_target.transpose() * (target.colwise() - current.mean_target);
    next.path = dtw_align(proj_ref, proj_target, LocalCost::squared_euclidean).path;
    spatial_step(ref, target, options.components, options.ridge, next);
    evaluate_objective(ref, target, energy_ref, energy_target, options.energy_weight, next);
    const double value = next.objective();
    if (!std::isfinite(value)) throw Error(Errc::numerical, "edtw: non-finite objective");

    if (have_accepted && value > sol.objective_trace.back()) {
      // The sweep would raise the objective; the current iterate is a fixed point.
      sol.converged = true;
      break;
    }
    const double previous = have_accepted ? sol.objective_trace.back() : 0.0;
    current = std::move(next);
    sol.objective_trace.push_back(value);
    if (value < options.tol || (have_accepted && std::abs(previous - value) < options.tol)) {
      have_accepted = true;
      sol.converged = true;
      break;
    }
    have_accepted = true;
  }

  sol.path = std::move(current.path);
  sol.v_ref = std::move(current.v_ref);
  sol.v_target = std::move(current.v_target);
  sol.alignment_cost = current.alignment;
  sol.energy_penalty = current.energy;
  return sol;
}

Eigen::MatrixXd synchronize_cycle(const WarpPath& path, const Eigen::MatrixXd& target,
                                  int ref_length) {
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(target.rows(), ref_length);
  std::vector<int> count(static_cast<std::size_t>(ref_length), 0);
  for (const auto& [i, j] : path.pairs) {
    if (i < 0 || i >= ref_length || j < 0 || j >= target.cols())
      throw Error(Errc::input, "synchronize: path index out of range");
    sum.col(i) += target.col(j);
    ++count[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < ref_length; ++i) {
    const int n = count[static_cast<std::size_t>(i)];
    if (n == 0) throw Error(Errc::input, "synchronize: path misses reference index " + std::to_string(i));
    if (n > 1) sum.col(i) /= static_cast<double>(n);
  }
  return sum;
}

std::vector<int> target_to_reference(const WarpPath& path, int target_length) {
  std::vector<int> out(static_cast<std::size_t>(target_length), 0);
  for (const auto& [i, j] : path.pairs)
    if (j >= 0 && j < target_length) out[static_cast<std::size_t>(j)] = i;
  return out;
}

SequenceSync synchronize_sequence(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& target,
                                  const EdtwOptions& options) {
  SequenceSync out;
  const auto ref_length = static_cast<int>(reference.cols());
  if (reference.rows() == target.rows() && reference.cols() == target.cols() &&
      reference == target) {
    for (int k = 0; k < ref_length; ++k) out.path.pairs.emplace_back(k, k);
    out.synced = target;
    return out;
  }
  auto sol = edtw_solve(reference, target, options);
  out.synced = synchronize_cycle(sol.path, target, ref_length);
  out.path = std::move(sol.path);
  out.iterations = sol.iterations_used;
  out.converged = sol.converged;
  return out;
}

bool SyncedBattery::voltage_monotone() const {
  for (const auto& slice : synced)
    for (Eigen::Index k = 1; k < slice.cols(); ++k)
      if (slice(kVoltage, k) - slice(kVoltage, k - 1) > noise_bound + 1e-12) return false;
  return true;
}

SyncedBattery synchronize_to_reference(const BatteryRecord& record,
                                       const CycleTrajectory& reference,
                                       const EdtwOptions& options, double noise_bound,
                                       unsigned threads) {
  const std::size_t n = record.size();
  SyncedBattery out;
  out.source = record.battery_id;
  out.reference_length = static_cast<int>(reference.length());
  out.ref_cycle = reference.cycle_index;
  out.noise_bound = noise_bound;
  out.capacities = record.capacities;
  out.synced.resize(n);
  out.per_cycle_energy_error.resize(n);
  out.iterations.resize(n);
  out.converged.resize(n);
  for (const auto& c : record.cycles) out.cycle_indices.push_back(c.cycle_index);

  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const auto& cycle = record.cycles[i];
        auto result = synchronize_sequence(reference.samples, cycle.samples, options);
        out.per_cycle_energy_error[i] = relative_energy_error(cycle.samples, result.synced);
        out.iterations[i] = result.iterations;
        out.converged[i] = result.converged;
        out.synced[i] = std::move(result.synced);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    const auto tag = "cycle " + std::to_string(record.cycles[i].cycle_index) + " vs reference " +
                     std::to_string(reference.cycle_index) + ": ";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), tag + e.what());
    } catch (const std::exception& e) {
      throw Error(Errc::numerical, tag + e.what());
    }
  }
  return out;
}

SyncedBattery synchronize_battery(const BatteryRecord& record, int ref_cycle,
                                  const EdtwOptions& options, double noise_bound,
                                  unsigned threads) {
  const auto it = std::find_if(record.cycles.begin(), record.cycles.end(),
                               [&](const CycleTrajectory& c) { return c.cycle_index == ref_cycle; });
  if (it == record.cycles.end())
    throw Error(Errc::input, "reference cycle " + std::to_string(ref_cycle) + " not in record");
  return synchronize_to_reference(record, *it, options, noise_bound, threads);
}

}  // namespace soh
