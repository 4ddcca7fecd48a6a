#pragma once

#include "soh/importance.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace soh {

struct Architecture {
  int layers = 2;
  int hidden = 100;
};

/// Weights of one recurrent layer. Gate blocks are stacked as
/// [input; forget; candidate; output], each `hidden` rows tall.
struct LstmLayer {
  Eigen::MatrixXd w_input;      // 4H x input
  Eigen::MatrixXd w_recurrent;  // 4H x H
  Eigen::VectorXd bias;         // 4H
};

struct ModelParameters {
  int input_dim = 0;
  int hidden = 0;
  std::vector<LstmLayer> layers;
  Eigen::VectorXd head_weights;  // H
  double head_bias = 0.0;
  double label_min = 0.0;
  double label_max = 1.0;
  // Encoder the model was trained against.
  int variables = 0;
  int grids = 0;
  Interval interval;
  std::uint64_t grid_hash = 0;

  double normalize(double capacity) const;
  double denormalize(double y) const;
  std::size_t parameter_count() const;
  /// Mutable views over every weight block, in a fixed order.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  void validate() const;
};

/// Uniform(+-1/sqrt(fan_in)) weights, forget-gate bias 1, head bias at the
/// centre of the normalised label range.
ModelParameters init_parameters(const Architecture& arch, int input_dim, std::uint64_t seed);

/// Same shapes as `like`, every weight zero.
ModelParameters zeros_like(const ModelParameters& like);

/// Capacity in ampere-hours.
double forward(const ModelParameters& params, const EncodedCycle& encoded);
double forward_normalized(const ModelParameters& params, const EncodedCycle& encoded);

/// Normalised predictions for equally long sequences, one column per cycle.
std::vector<double> forward_batch(const ModelParameters& params,
                                  std::span<const EncodedCycle* const> batch);

enum class GradientFault { none, forget_gate };

/// Mean of 0.5 * (y_hat - y)^2 over the batch on normalised targets; the gradient
/// of that loss is written into `grad` (shaped like params).
double loss_and_gradient(const ModelParameters& params,
                         std::span<const EncodedCycle* const> batch,
                         std::span<const double> normalized_targets, ModelParameters& grad,
                         GradientFault fault = GradientFault::none);

/// Max relative error between analytic and central-difference gradients over a
/// random subset of coordinates.
double gradient_check(const ModelParameters& params, const EncodedCycle& encoded,
                      double capacity, double epsilon, int coordinates = 200,
                      std::uint64_t seed = 0, GradientFault fault = GradientFault::none);

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int batch_size = 16;
  int early_stop_patience = 20;
  double validation_fraction = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

struct LabeledCycle {
  EncodedCycle encoded;
  double capacity = 0.0;
};

struct TrainHistory {
  std::vector<double> train_rmse;       // Ah
  std::vector<double> validation_rmse;  // Ah, NaN when no validation split
  std::vector<double> best_rmse;        // running best of the early-stopping metric
  int best_epoch = 0;
};

struct TrainResult {
  ModelParameters params;
  TrainHistory history;
};

TrainResult train(std::span<const LabeledCycle> train_set, const TrainConfig& config,
                  const Architecture& arch = {});

struct Metrics {
  double rmse_percent = 0.0;  // RMSE of capacity / nominal, in percent
  double r_squared = 0.0;     // fraction, 1 = perfect
};

Metrics evaluate(const ModelParameters& params, std::span<const LabeledCycle> test_set,
                 double nominal_capacity);
Metrics score(std::span<const double> predicted, std::span<const double> truth,
              double nominal_capacity);

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const ModelParameters& params, const std::filesystem::path& path);

struct LoadedModel {
  ModelParameters params;
  std::vector<std::string> warnings;
};

/// Pass `expected_grid_hash` to get a warning when the file was trained
/// against a different encoder.
LoadedModel load_model(const std::filesystem::path& path,
                       std::uint64_t expected_grid_hash = 0);

}  // namespace soh
