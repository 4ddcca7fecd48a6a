#include "soh/error.hpp"
#include "soh/regressor.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

using namespace soh;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

EncodedCycle encoded(int variables, int grids, std::vector<std::uint16_t> bins) {
  EncodedCycle e;
  e.variables = variables;
  e.grids = grids;
  const int steps = static_cast<int>(bins.size()) / variables;
  e.interval = {0, steps - 1};
  e.bins = std::move(bins);
  return e;
}

EncodedCycle random_encoded(std::mt19937_64& rng, int steps, int grids = 200) {
  std::uniform_int_distribution<int> bin(0, grids - 1);
  std::vector<std::uint16_t> bins(static_cast<std::size_t>(2 * steps));
  for (auto& b : bins) b = static_cast<std::uint16_t>(bin(rng));
  return encoded(2, grids, std::move(bins));
}

/// One layer, one unit, input of two one-hot rows.
ModelParameters tiny_model() {
  ModelParameters p;
  p.input_dim = 2;
  p.hidden = 1;
  LstmLayer l;
  l.w_input.resize(4, 2);
  l.w_input << 0.3, -0.2,  // i
      0.5, 0.1,            // f
      -0.4, 0.8,           // g
      0.2, 0.6;            // o
  l.w_recurrent.resize(4, 1);
  l.w_recurrent << 0.7, -0.3, 0.25, 0.5;
  l.bias.resize(4);
  l.bias << 0.1, 1.0, -0.05, 0.2;
  p.layers.push_back(l);
  p.head_weights = Eigen::VectorXd::Constant(1, 1.5);
  p.head_bias = 0.25;
  p.label_min = 0.8;
  p.label_max = 1.2;
  p.variables = 1;
  p.grids = 2;
  return p;
}

}  // namespace

TEST_SUITE("regressor") {
  TEST_CASE("hand-evaluated LSTM cell over two steps") {
    const auto p = tiny_model();
    const auto& l = p.layers[0];
    // Step 1 activates row 1, step 2 activates row 0.
    double h = 0.0, c = 0.0;
    for (int row : {1, 0}) {
      auto z = [&](int gate) { return l.w_input(gate, row) + l.w_recurrent(gate, 0) * h + l.bias(gate); };
      const double i = sigmoid(z(0)), f = sigmoid(z(1)), g = std::tanh(z(2)), o = sigmoid(z(3));
      c = f * c + i * g;
      h = o * std::tanh(c);
    }
    const double y = 1.5 * h + 0.25;
    const double expected = 0.8 + y * 0.4;
    const auto e = encoded(1, 2, {1, 0});
    CHECK(forward_normalized(p, e) == doctest::Approx(y).epsilon(1e-14));
    CHECK(forward(p, e) == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("single step matches a one-cell hand computation") {
    const auto p = tiny_model();
    const auto& l = p.layers[0];
    const double i = sigmoid(l.w_input(0, 0) + l.bias(0));
    const double g = std::tanh(l.w_input(2, 0) + l.bias(2));
    const double o = sigmoid(l.w_input(3, 0) + l.bias(3));
    const double h = o * std::tanh(i * g);
    CHECK(forward_normalized(p, encoded(1, 2, {0})) == doctest::Approx(1.5 * h + 0.25).epsilon(1e-14));
  }

  TEST_CASE("zero weights return the de-normalised head bias for any input") {
    auto p = zeros_like(init_parameters({}, 400, 1));
    p.head_bias = 0.3;
    p.label_min = 1.0;
    p.label_max = 2.0;
    std::mt19937_64 rng(1);
    for (int t = 0; t < 5; ++t) CHECK(forward(p, random_encoded(rng, 15)) == 1.3);
  }

  TEST_CASE("seeded initialisation and forward pass are bitwise reproducible") {
    std::mt19937_64 rng(5);
    const auto e = random_encoded(rng, 25);
    const auto a = init_parameters({}, 400, 42);
    const auto b = init_parameters({}, 400, 42);
    CHECK(forward(a, e) == forward(b, e));
    CHECK(a.parameter_count() == 4 * 100 * (400 + 100 + 1) + 4 * 100 * (100 + 100 + 1) + 100 + 1);
    const auto c = init_parameters({}, 400, 43);
    CHECK(forward(a, e) != forward(c, e));
  }

  TEST_CASE("wrong input size is a model-input error") {
    const auto p = init_parameters({}, 400, 1);
    std::mt19937_64 rng(5);
    try {
      forward(p, random_encoded(rng, 5, 100));
      FAIL("expected model-input error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::model_input);
    }
  }

  TEST_CASE("batched forward is per-cycle and order independent") {
    const auto p = init_parameters({}, 400, 3);
    std::mt19937_64 rng(8);
    std::vector<EncodedCycle> cycles;
    for (int i = 0; i < 6; ++i) cycles.push_back(random_encoded(rng, 12));
    std::vector<const EncodedCycle*> batch, reversed;
    for (const auto& c : cycles) batch.push_back(&c);
    reversed.assign(batch.rbegin(), batch.rend());
    const auto a = forward_batch(p, batch);
    const auto b = forward_batch(p, reversed);
    for (std::size_t i = 0; i < cycles.size(); ++i) {
      CHECK(a[i] == b[cycles.size() - 1 - i]);
      CHECK(a[i] == doctest::Approx(forward_normalized(p, cycles[i])).epsilon(1e-13));
    }
  }

  TEST_CASE("analytic gradients match central differences") {
    std::mt19937_64 rng(11);
    for (std::uint64_t seed : {1u, 2u}) {
      const auto p = init_parameters({}, 400, seed);
      const auto e = random_encoded(rng, 20);
      CHECK(gradient_check(p, e, 0.93, 1e-5, 200, seed) <= 1e-4);
    }
  }

  TEST_CASE("a corrupted forget-gate gradient is caught") {
    std::mt19937_64 rng(12);
    const auto p = init_parameters({}, 400, 4);
    const auto e = random_encoded(rng, 20);
    CHECK(gradient_check(p, e, 0.93, 1e-5, 200, 4, GradientFault::forget_gate) > 1e-2);
  }

  TEST_CASE("zero-weight model: analytic and numeric gradients agree within 1e-6") {
    auto p = zeros_like(init_parameters({2, 8}, 20, 1));
    p.label_min = 0.0;
    p.label_max = 1.0;
    const auto e = encoded(2, 10, {1, 3, 4, 9, 0, 0, 7, 2});
    const EncodedCycle* one[] = {&e};
    const double target[] = {0.7};
    ModelParameters grad;
    loss_and_gradient(p, one, target, grad);
    auto probe = p;
    auto blocks = probe.blocks();
    const auto g = grad.blocks();
    const double eps = 1e-5;
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (std::size_t k = 0; k < blocks[b].size(); ++k) {
        const double saved = blocks[b][k];
        blocks[b][k] = saved + eps;
        const double up = 0.5 * std::pow(forward_normalized(probe, e) - 0.7, 2);
        blocks[b][k] = saved - eps;
        const double down = 0.5 * std::pow(forward_normalized(probe, e) - 0.7, 2);
        blocks[b][k] = saved;
        CHECK(std::abs((up - down) / (2 * eps) - g[b][k]) <= 1e-6);
      }
  }

  TEST_CASE("label normalisation round-trips") {
    ModelParameters p;
    p.label_min = 0.71;
    p.label_max = 1.093;
    for (double y : {-0.3, 0.0, 0.123, 0.5, 1.0, 1.7})
      CHECK(std::abs(p.normalize(p.denormalize(y)) - y) <= 1e-12);
  }

  TEST_CASE("learns a capacity that is linear in the voltage bin") {
    std::vector<LabeledCycle> set;
    for (int c = 0; c < 30; ++c) {
      const auto bin = static_cast<std::uint16_t>(10 + 5 * c);
      std::vector<std::uint16_t> bins;
      for (int t = 0; t < 12; ++t) {
        bins.push_back(bin);
        bins.push_back(static_cast<std::uint16_t>(100 + (t % 3)));
      }
      set.push_back({encoded(2, 200, std::move(bins)), 1.1 - 0.004 * c});
    }
    TrainConfig tc;
    tc.validation_fraction = 0.0;
    tc.max_epochs = 200;
    const auto r = train(set, tc);
    double sq = 0.0;
    for (const auto& s : set) sq += std::pow(forward(r.params, s.encoded) - s.capacity, 2);
    const double rmse = std::sqrt(sq / set.size());
    CHECK(rmse <= 0.01 * (0.004 * 29));
    CHECK(r.history.train_rmse.size() <= 200);
  }

  TEST_CASE("running best never increases and training is deterministic") {
    std::mt19937_64 rng(21);
    std::vector<LabeledCycle> set;
    for (int c = 0; c < 20; ++c) set.push_back({random_encoded(rng, 8), 1.0 + 0.005 * c});
    TrainConfig tc;
    tc.max_epochs = 15;
    tc.validation_fraction = 0.2;
    const auto a = train(set, tc);
    const auto b = train(set, tc);
    const auto& best = a.history.best_rmse;
    for (std::size_t i = 1; i < best.size(); ++i) CHECK(best[i] <= best[i - 1]);
    CHECK(a.history.train_rmse == b.history.train_rmse);
    CHECK(forward(a.params, set[0].encoded) == forward(b.params, set[0].encoded));
    CHECK(a.history.best_epoch >= 1);
  }

  TEST_CASE("a single training cycle is fitted without validation") {
    std::mt19937_64 rng(2);
    std::vector<LabeledCycle> set{{random_encoded(rng, 6), 0.95}};
    TrainConfig tc;
    tc.validation_fraction = 0.0;
    tc.max_epochs = 100;
    const auto r = train(set, tc);
    CHECK(forward(r.params, set[0].encoded) == doctest::Approx(0.95).epsilon(1e-3));
  }

  TEST_CASE("empty or inconsistent training sets are rejected") {
    std::vector<LabeledCycle> empty;
    CHECK_THROWS_AS(train(empty, {}), Error);
    std::mt19937_64 rng(2);
    std::vector<LabeledCycle> mixed{{random_encoded(rng, 6), 1.0}, {random_encoded(rng, 7), 0.9}};
    CHECK_THROWS_AS(train(mixed, {}), Error);
    TrainConfig bad;
    bad.validation_fraction = 0.7;
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("metric definitions") {
    const std::vector<double> truth{1.05, 0.92, 0.76};
    const auto perfect = score(truth, truth, 1.1);
    CHECK(perfect.rmse_percent == 0.0);
    CHECK(perfect.r_squared == 1.0);
    const std::vector<double> mean(3, 0.91);
    CHECK(std::abs(score(mean, truth, 1.1).r_squared) < 1e-12);
    const std::vector<double> pred{1.0, 0.9, 0.8};
    const auto m = score(pred, truth, 1.1);
    CHECK(m.r_squared == doctest::Approx(1.0 - 0.0045 / 0.0422).epsilon(1e-12));
    CHECK(m.rmse_percent == doctest::Approx(100.0 * std::sqrt(0.0045 / 3.0) / 1.1).epsilon(1e-12));
    const std::vector<double> flat(3, 1.0);
    CHECK_THROWS_AS(score(pred, flat, 1.1), Error);
  }

  TEST_CASE("model file round-trips bitwise and rejects damage") {
    const auto dir = test::scratch_dir("model_io");
    auto p = init_parameters({}, 400, 9);
    p.label_min = 0.7;
    p.label_max = 1.1;
    p.variables = 2;
    p.grids = 200;
    p.interval = {50, 239};
    p.grid_hash = 0x1234abcdull;
    const auto file = dir / "m.bin";
    save_model(p, file);
    const auto back = load_model(file, 0x1234abcdull);
    CHECK(back.warnings.empty());
    const auto a = p.blocks();
    const auto b = back.params.blocks();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::equal(a[i].begin(), a[i].end(), b[i].begin(), b[i].end()));
    CHECK(back.params.interval == p.interval);
    CHECK(back.params.label_min == p.label_min);

    CHECK_FALSE(load_model(file, 99).warnings.empty());

    std::vector<char> bytes;
    {
      std::ifstream in(file, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto expect_load_error = [&](std::vector<char> damaged) {
      {
        std::ofstream out(dir / "bad.bin", std::ios::binary);
        out.write(damaged.data(), static_cast<std::streamsize>(damaged.size()));
      }
      try {
        load_model(dir / "bad.bin");
        FAIL("expected load error");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::load);
      }
    };
    auto version = bytes;
    version[8] ^= 0x01;  // first byte of the version field after the 8-byte magic
    expect_load_error(version);
    auto body = bytes;
    body[bytes.size() / 2] ^= 0x10;
    expect_load_error(body);
    expect_load_error(std::vector<char>(bytes.begin(), bytes.begin() + 40));
    expect_load_error({});
  }
}
