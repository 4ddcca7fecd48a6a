#include "soh/regressor.hpp"

#include "soh/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace soh {

double ModelParameters::normalize(double capacity) const {
  return (capacity - label_min) / (label_max - label_min);
}

double ModelParameters::denormalize(double y) const {
  return label_min + y * (label_max - label_min);
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += b.size();
  return n;
}

std::vector<std::span<double>> ModelParameters::blocks() {
  std::vector<std::span<double>> out;
  auto add = [&out](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (auto& layer : layers) {
    add(layer.w_input);
    add(layer.w_recurrent);
    add(layer.bias);
  }
  add(head_weights);
  out.emplace_back(&head_bias, 1);
  return out;
}

std::vector<std::span<const double>> ModelParameters::blocks() const {
  auto mutable_blocks = const_cast<ModelParameters*>(this)->blocks();
  return {mutable_blocks.begin(), mutable_blocks.end()};
}

void ModelParameters::validate() const {
  auto fail = [](const std::string& m) { throw Error(Errc::model_input, "model: " + m); };
  if (layers.empty() || hidden < 1 || input_dim < 1) fail("empty architecture");
  const Eigen::Index gates = 4 * hidden;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Eigen::Index in = l == 0 ? input_dim : hidden;
    const auto& layer = layers[l];
    if (layer.w_input.rows() != gates || layer.w_input.cols() != in ||
        layer.w_recurrent.rows() != gates || layer.w_recurrent.cols() != hidden ||
        layer.bias.size() != gates)
      fail("layer " + std::to_string(l) + " has inconsistent shapes");
  }
  if (head_weights.size() != hidden) fail("head has inconsistent shape");
  for (const auto& b : blocks())
    for (double v : b)
      if (!std::isfinite(v)) fail("non-finite weight");
  if (!(label_min < label_max)) fail("label_min must be below label_max");
}

ModelParameters init_parameters(const Architecture& arch, int input_dim, std::uint64_t seed) {
  if (arch.layers < 1 || arch.hidden < 1 || input_dim < 1)
    throw Error(Errc::config, "model: layers, hidden and input_dim must be positive");
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Eigen::MatrixXd& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };

  ModelParameters p;
  p.input_dim = input_dim;
  p.hidden = arch.hidden;
  const int h = arch.hidden;
  for (int l = 0; l < arch.layers; ++l) {
    const int in = l == 0 ? input_dim : h;
    LstmLayer layer;
    layer.w_input.resize(4 * h, in);
    layer.w_recurrent.resize(4 * h, h);
    fill(layer.w_input, 1.0 / std::sqrt(static_cast<double>(in)));
    fill(layer.w_recurrent, 1.0 / std::sqrt(static_cast<double>(h)));
    layer.bias = Eigen::VectorXd::Zero(4 * h);
    layer.bias.segment(h, h).setOnes();
    p.layers.push_back(std::move(layer));
  }
  Eigen::MatrixXd head(h, 1);
  fill(head, 1.0 / std::sqrt(static_cast<double>(h)));
  p.head_weights = head.col(0);
  p.head_bias = 0.5;
  return p;
}

ModelParameters zeros_like(const ModelParameters& like) {
  ModelParameters z = like;
  for (auto& b : z.blocks()) std::fill(b.begin(), b.end(), 0.0);
  return z;
}

namespace {

struct LayerTrace {
  Eigen::MatrixXd gates;   // 4H x (T*B), activated [i; f; g; o]
  Eigen::MatrixXd cells;   // H x (T*B)
  Eigen::MatrixXd hidden;  // H x (T*B)
};

struct ForwardPass {
  int steps = 0;
  int batch = 0;
  std::vector<LayerTrace> layers;
  Eigen::VectorXd output;  // normalised prediction per batch column
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_batch(const ModelParameters& params, std::span<const EncodedCycle* const> batch) {
  if (batch.empty()) throw Error(Errc::model_input, "model: empty batch");
  const int steps = batch.front()->steps();
  for (const auto* e : batch) {
    if (e->rows() != params.input_dim)
      throw Error(Errc::model_input, "model: encoded height " + std::to_string(e->rows()) +
                                         " differs from input_dim " +
                                         std::to_string(params.input_dim));
    if (e->steps() != steps || steps < 1)
      throw Error(Errc::model_input, "model: batch sequences differ in length");
  }
}

ForwardPass run_forward(const ModelParameters& params,
                        std::span<const EncodedCycle* const> batch) {
  check_batch(params, batch);
  ForwardPass fp;
  fp.steps = batch.front()->steps();
  fp.batch = static_cast<int>(batch.size());
  const int h = params.hidden;
  const int b = fp.batch;
  const Eigen::Index cols = static_cast<Eigen::Index>(fp.steps) * b;

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Eigen::MatrixXd pre(4 * h, cols);
    if (l == 0) {
      for (int t = 0; t < fp.steps; ++t) {
        for (int s = 0; s < b; ++s) {
          auto col = pre.col(static_cast<Eigen::Index>(t) * b + s);
          const auto& enc = *batch[static_cast<std::size_t>(s)];
          col = layer.w_input.col(enc.active_row(t, 0));
          for (int j = 1; j < enc.variables; ++j) col += layer.w_input.col(enc.active_row(t, j));
        }
      }
    } else {
      pre.noalias() = layer.w_input * fp.layers[l - 1].hidden;
    }
    pre.colwise() += layer.bias;

    LayerTrace tr;
    tr.gates.resize(4 * h, cols);
    tr.cells.resize(h, cols);
    tr.hidden.resize(h, cols);
    Eigen::MatrixXd a(4 * h, b);
    for (int t = 0; t < fp.steps; ++t) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(t) * b;
      a = pre.middleCols(c0, b);
      if (t > 0) a.noalias() += layer.w_recurrent * tr.hidden.middleCols(c0 - b, b);
      auto gates = tr.gates.middleCols(c0, b);
      gates.topRows(2 * h) = a.topRows(2 * h).unaryExpr(&sigmoid);
      gates.middleRows(2 * h, h) = a.middleRows(2 * h, h).array().tanh().matrix();
      gates.bottomRows(h) = a.bottomRows(h).unaryExpr(&sigmoid);
      auto cell = tr.cells.middleCols(c0, b);
      cell = gates.topRows(h).cwiseProduct(gates.middleRows(2 * h, h));
      if (t > 0) cell += gates.middleRows(h, h).cwiseProduct(tr.cells.middleCols(c0 - b, b));
      tr.hidden.middleCols(c0, b) =
          gates.bottomRows(h).cwiseProduct(cell.array().tanh().matrix());
    }
    fp.layers.push_back(std::move(tr));
  }

  const auto& top = fp.layers.back().hidden;
  fp.output = top.rightCols(b).transpose() * params.head_weights;
  fp.output.array() += params.head_bias;
  return fp;
}

}  // namespace

std::vector<double> forward_batch(const ModelParameters& params,
                                  std::span<const EncodedCycle* const> batch) {
  const auto fp = run_forward(params, batch);
  return {fp.output.data(), fp.output.data() + fp.output.size()};
}

double forward_normalized(const ModelParameters& params, const EncodedCycle& encoded) {
  const EncodedCycle* one[] = {&encoded};
  return run_forward(params, one).output(0);
}

double forward(const ModelParameters& params, const EncodedCycle& encoded) {
  return params.denormalize(forward_normalized(params, encoded));
}

double loss_and_gradient(const ModelParameters& params,
                         std::span<const EncodedCycle* const> batch,
                         std::span<const double> normalized_targets, ModelParameters& grad,
                         GradientFault fault) {
  if (normalized_targets.size() != batch.size())
    throw Error(Errc::model_input, "model: target count differs from batch size");
  const auto fp = run_forward(params, batch);
  const int h = params.hidden;
  const int b = fp.batch;
  const int steps = fp.steps;
  const Eigen::Index cols = static_cast<Eigen::Index>(steps) * b;

  grad = zeros_like(params);
  Eigen::VectorXd dy(b);
  double loss = 0.0;
  for (int s = 0; s < b; ++s) {
    const double err = fp.output(s) - normalized_targets[static_cast<std::size_t>(s)];
    loss += 0.5 * err * err;
    dy(s) = err / b;
  }
  loss /= b;

  const auto& top = fp.layers.back().hidden;
  grad.head_weights = top.rightCols(b) * dy;
  grad.head_bias = dy.sum();

  // Gradient arriving at each layer's hidden outputs from above.
  Eigen::MatrixXd dh_ext = Eigen::MatrixXd::Zero(h, cols);
  dh_ext.rightCols(b) = params.head_weights * dy.transpose();

  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = params.layers[static_cast<std::size_t>(l)];
    const auto& tr = fp.layers[static_cast<std::size_t>(l)];
    auto& g = grad.layers[static_cast<std::size_t>(l)];

    Eigen::MatrixXd da(4 * h, cols);
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(h, b);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(h, b);
    for (int t = steps - 1; t >= 0; --t) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(t) * b;
      const auto gates = tr.gates.middleCols(c0, b);
      const auto i = gates.topRows(h).array();
      const auto f = gates.middleRows(h, h).array();
      const auto gg = gates.middleRows(2 * h, h).array();
      const auto o = gates.bottomRows(h).array();
      const Eigen::ArrayXXd tc = tr.cells.middleCols(c0, b).array().tanh();

      const Eigen::ArrayXXd dh = dh_ext.middleCols(c0, b).array() + dh_next.array();
      const Eigen::ArrayXXd dc = dc_next.array() + dh * o * (1.0 - tc * tc);
      auto out = da.middleCols(c0, b);
      out.topRows(h) = (dc * gg * i * (1.0 - i)).matrix();
      if (t > 0) {
        Eigen::ArrayXXd df = dc * tr.cells.middleCols(c0 - b, b).array() * f * (1.0 - f);
        if (fault == GradientFault::forget_gate) df *= 1.5;
        out.middleRows(h, h) = df.matrix();
      } else {
        out.middleRows(h, h).setZero();
      }
      out.middleRows(2 * h, h) = (dc * i * (1.0 - gg * gg)).matrix();
      out.bottomRows(h) = (dh * tc * o * (1.0 - o)).matrix();

      dc_next = (dc * f).matrix();
      dh_next.noalias() = layer.w_recurrent.transpose() * out;
    }

    g.bias = da.rowwise().sum();
    if (steps > 1)
      g.w_recurrent.noalias() =
          da.rightCols(cols - b) * tr.hidden.leftCols(cols - b).transpose();
    if (l > 0) {
      const auto& below = fp.layers[static_cast<std::size_t>(l - 1)].hidden;
      g.w_input.noalias() = da * below.transpose();
      dh_ext.noalias() = layer.w_input.transpose() * da;
    } else {
      for (int t = 0; t < steps; ++t)
        for (int s = 0; s < b; ++s) {
          const auto& enc = *batch[static_cast<std::size_t>(s)];
          const auto col = da.col(static_cast<Eigen::Index>(t) * b + s);
          for (int j = 0; j < enc.variables; ++j) g.w_input.col(enc.active_row(t, j)) += col;
        }
    }
  }
  return loss;
}

double gradient_check(const ModelParameters& params, const EncodedCycle& encoded,
                      double capacity, double epsilon, int coordinates, std::uint64_t seed,
                      GradientFault fault) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw Error(Errc::config, "gradient_check: epsilon must be in [1e-7, 1e-3]");
  const EncodedCycle* one[] = {&encoded};
  const double target = params.normalize(capacity);
  const double targets[] = {target};

  ModelParameters grad;
  loss_and_gradient(params, one, targets, grad, fault);

  ModelParameters probe = params;
  auto probe_blocks = probe.blocks();
  const auto grad_blocks = grad.blocks();
  std::vector<std::pair<std::size_t, std::size_t>> index;
  for (std::size_t bi = 0; bi < probe_blocks.size(); ++bi)
    for (std::size_t k = 0; k < probe_blocks[bi].size(); ++k) index.emplace_back(bi, k);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, index.size() - 1);
  auto loss_at = [&] {
    const double err = forward_normalized(probe, encoded) - target;
    return 0.5 * err * err;
  };

  // Gradients smaller than this are compared on an absolute scale.
  constexpr double kFloor = 1e-6;
  double worst = 0.0;
  for (int c = 0; c < coordinates; ++c) {
    const auto [bi, k] = index[pick(rng)];
    double& w = probe_blocks[bi][k];
    const double saved = w;
    w = saved + epsilon;
    const double up = loss_at();
    w = saved - epsilon;
    const double down = loss_at();
    w = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grad_blocks[bi][k];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), kFloor});
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
  }
  return worst;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || max_epochs < 1 || batch_size < 1 || early_stop_patience < 1)
    throw Error(Errc::config, "train: learning_rate, max_epochs, batch_size and patience must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5))
    throw Error(Errc::config, "train: validation_fraction must be in [0, 0.5]");
}

namespace {

class Adam {
 public:
  explicit Adam(const ModelParameters& like, double lr) : lr_(lr) {
    for (const auto& b : like.blocks()) {
      m_.emplace_back(b.size(), 0.0);
      v_.emplace_back(b.size(), 0.0);
    }
  }

  void step(ModelParameters& params, const ModelParameters& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    auto pb = params.blocks();
    const auto gb = grad.blocks();
    for (std::size_t bi = 0; bi < pb.size(); ++bi) {
      auto& m = m_[bi];
      auto& v = v_[bi];
      for (std::size_t k = 0; k < pb[bi].size(); ++k) {
        const double g = gb[bi][k];
        m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g;
        v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g * g;
        pb[bi][k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace

TrainResult train(std::span<const LabeledCycle> train_set, const TrainConfig& config,
                  const Architecture& arch) {
  config.validate();
  if (train_set.empty()) throw Error(Errc::training, "train: empty training set");
  const int input_dim = train_set.front().encoded.rows();
  const int steps = train_set.front().encoded.steps();
  for (const auto& s : train_set)
    if (s.encoded.rows() != input_dim || s.encoded.steps() != steps)
      throw Error(Errc::model_input, "train: encodings differ in shape");

  const auto n = train_set.size();
  auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = 0;
  const std::size_t n_fit = n - n_val;

  ModelParameters params = init_parameters(arch, input_dim, config.seed);
  const auto& first = train_set.front().encoded;
  params.variables = first.variables;
  params.grids = first.grids;
  params.interval = first.interval;
  auto [lo, hi] = std::minmax_element(train_set.begin(), train_set.end(),
                                      [](const auto& a, const auto& b) { return a.capacity < b.capacity; });
  params.label_min = lo->capacity;
  params.label_max = hi->capacity;
  if (!(params.label_min < params.label_max)) {
    const double half = 0.05 * std::abs(params.label_min) + 1e-3;
    params.label_min -= half;
    params.label_max += half;
  }
  const double label_span = params.label_max - params.label_min;

  std::vector<double> targets(n);
  for (std::size_t i = 0; i < n; ++i) targets[i] = params.normalize(train_set[i].capacity);

  Adam adam(params, config.learning_rate);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(n_fit);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  ModelParameters best = params;
  double best_metric = std::numeric_limits<double>::infinity();
  int since_best = 0;
  ModelParameters grad;
  std::vector<const EncodedCycle*> batch;
  std::vector<double> batch_targets;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sq_sum = 0.0;
    for (std::size_t start = 0; start < n_fit; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(n_fit, start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      batch_targets.clear();
      for (std::size_t k = start; k < stop; ++k) {
        batch.push_back(&train_set[order[k]].encoded);
        batch_targets.push_back(targets[order[k]]);
      }
      const double loss = loss_and_gradient(params, batch, batch_targets, grad);
      if (!std::isfinite(loss))
        throw Error(Errc::training, "train: loss diverged at epoch " + std::to_string(epoch));
      sq_sum += 2.0 * loss * static_cast<double>(stop - start);
      adam.step(params, grad);
    }
    const double train_rmse = std::sqrt(sq_sum / static_cast<double>(n_fit)) * label_span;

    double val_rmse = std::numeric_limits<double>::quiet_NaN();
    if (n_val > 0) {
      double acc = 0.0;
      for (std::size_t i = n_fit; i < n; ++i) {
        const double err = forward(params, train_set[i].encoded) - train_set[i].capacity;
        acc += err * err;
      }
      val_rmse = std::sqrt(acc / static_cast<double>(n_val));
      if (!std::isfinite(val_rmse))
        throw Error(Errc::training, "train: validation loss diverged at epoch " + std::to_string(epoch));
    }
    result.history.train_rmse.push_back(train_rmse);
    result.history.validation_rmse.push_back(val_rmse);

    const double metric = n_val > 0 ? val_rmse : train_rmse;
    if (metric < best_metric) {
      best_metric = metric;
      best = params;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.best_rmse.push_back(best_metric);
    if (since_best >= config.early_stop_patience) break;
  }
  result.params = std::move(best);
  return result;
}

Metrics score(std::span<const double> predicted, std::span<const double> truth,
              double nominal_capacity) {
  if (predicted.size() != truth.size() || truth.empty())
    throw Error(Errc::input, "metrics: need equally many predictions and targets");
  const double n = static_cast<double>(truth.size());
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double ss_res = 0.0;
  double ss_tot = 0.0;
  double rel = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double err = predicted[i] - truth[i];
    ss_res += err * err;
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
    rel += (err / nominal_capacity) * (err / nominal_capacity);
  }
  if (!(ss_tot > 0.0)) throw Error(Errc::degenerate_data, "metrics: R^2 undefined for constant targets");
  return {100.0 * std::sqrt(rel / n), 1.0 - ss_res / ss_tot};
}

Metrics evaluate(const ModelParameters& params, std::span<const LabeledCycle> test_set,
                 double nominal_capacity) {
  if (test_set.empty()) throw Error(Errc::input, "evaluate: empty test set");
  std::vector<double> pred, truth;
  for (const auto& s : test_set) {
    pred.push_back(forward(params, s.encoded));
    truth.push_back(s.capacity);
  }
  return score(pred, truth, nominal_capacity);
}

}  // namespace soh
