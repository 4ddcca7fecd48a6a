#pragma once

#include "soh/dataset.hpp"
#include "soh/importance.hpp"
#include "soh/warp.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

namespace soh::test {

inline Eigen::MatrixXd row(std::initializer_list<double> values) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) m(0, i++) = v;
  return m;
}

inline Eigen::MatrixXd random_sequence(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// SyncedBattery holding the given slices, labelled 1..C.
inline SyncedBattery make_synced(std::vector<Eigen::MatrixXd> slices) {
  SyncedBattery s;
  s.reference_length = static_cast<int>(slices.front().cols());
  s.ref_cycle = 1;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    s.cycle_indices.push_back(static_cast<int>(i) + 1);
    s.capacities.push_back(1.0);
    s.per_cycle_energy_error.push_back(0.0);
    s.iterations.push_back(1);
    s.converged.push_back(true);
  }
  s.synced = std::move(slices);
  return s;
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("soh_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline SyntheticConfig small_synthetic(int cycles = 30, int length = 80) {
  SyntheticConfig c;
  c.cycles = cycles;
  c.base_length = length;
  return c;
}

}  // namespace soh::test
