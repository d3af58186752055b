#include <doctest.h>

#include <cmath>
#include <cstring>

#include "flowcast/data.hpp"
#include "flowcast/errors.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/training.hpp"

using namespace flowcast;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool params_bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t e = 0; e < a.size(); ++e) {
    auto [name, t] = a.entry(e);
    if (!bitwise_equal(t, b.at(name))) return false;
  }
  return true;
}

SyntheticBasinSpec tiny_basin_spec(std::uint64_t seed, std::size_t days = 200,
                                   std::size_t extent = 4) {
  SyntheticBasinSpec spec;
  spec.height = extent;
  spec.width = extent;
  spec.days = days;
  spec.seed = seed;
  return spec;
}

TrainConfig tiny_train_config(std::size_t lookback = 20) {
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 16;
  config.lookback = lookback;
  config.lstm_hidden = 8;
  config.seed = 7;
  return config;
}

}  // namespace

TEST_CASE("chronological split follows the floor rule") {
  SplitIndices s100 = chronological_split(100, 0.7, 0.3);
  CHECK(s100.train_end == 49);
  CHECK(s100.val_end == 70);
  CHECK(s100.test_end == 100);

  SplitIndices s10 = chronological_split(10, 0.7, 0.3);
  CHECK(s10.train_end == 5);
  CHECK(s10.val_end == 7);
  CHECK(s10.test_end == 10);
}

TEST_CASE("split partitions are ordered, disjoint and covering") {
  Rng rng = derive_rng(61, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 10 + bounded(rng, 5000);
    SplitIndices s = chronological_split(n, 0.7, 0.3);
    CHECK(s.train_end > 0);
    CHECK(s.train_end < s.val_end);
    CHECK(s.val_end < s.test_end);
    CHECK(s.test_end == n);
    CHECK(s.n_train() + s.n_val() + s.n_test() == n);
  }
}

TEST_CASE("split rejects tiny inputs and bad fractions") {
  CHECK_THROWS_AS(chronological_split(9, 0.7, 0.3), DataError);
  CHECK_THROWS_AS(chronological_split(100, 0.0, 0.3), ConfigError);
  CHECK_THROWS_AS(chronological_split(100, 0.7, 1.0), ConfigError);
}

TEST_CASE("scaler uses the population convention") {
  std::vector<double> v{1, 2, 3};
  Scaler s = fit_scaler(v);
  CHECK(s.mean == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(s.std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));  // 0.81650

  std::vector<double> pair{-1, 1};
  Scaler sp = fit_scaler(pair);
  CHECK(sp.mean == 0.0);
  CHECK(sp.std == 1.0);

  CHECK_THROWS_AS(fit_scaler(std::vector<double>{4, 4, 4}), DataError);
  CHECK_THROWS_AS(fit_scaler(std::vector<double>{4}), DataError);
}

TEST_CASE("scale and inverse_scale are exact companions") {
  Scaler s{3.5, 1.25};
  CHECK(scale(s.mean, s) == 0.0);
  CHECK(scale(s.mean + s.std, s) == doctest::Approx(1.0).epsilon(1e-15));
  Rng rng = derive_rng(62, 0);
  for (int i = 0; i < 100; ++i) {
    const double x = uniform(rng, -100.0, 100.0);
    CHECK(inverse_scale(scale(x, s), s) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("mse examples") {
  std::vector<double> a{1, 2, 3};
  CHECK(mse_loss(a, a) == 0.0);

  std::vector<double> pred{0, 0};
  std::vector<double> target{1, 3};
  CHECK(mse_loss(pred, target) == doctest::Approx(5.0).epsilon(1e-15));

  std::vector<double> pred_c{7, 7};
  std::vector<double> target_c{8, 10};
  CHECK(mse_loss(pred_c, target_c) == doctest::Approx(5.0).epsilon(1e-12));

  CHECK_THROWS_AS(mse_loss(pred, a), ShapeError);
}

TEST_CASE("mse tape op matches the numeric version and finite differences") {
  Rng rng = derive_rng(63, 0);
  Tensor pred({6});
  Tensor target({6});
  for (std::size_t i = 0; i < 6; ++i) {
    pred[i] = uniform(rng, -2.0, 2.0);
    target[i] = uniform(rng, -2.0, 2.0);
  }
  Tape tape;
  Var p = tape.param("pred", pred);
  Var loss = mse_op(tape, p, target);
  CHECK(tape.value(loss).item() ==
        doctest::Approx(mse_loss(pred.vec(), target.vec())).epsilon(1e-15));

  NamedTensorList params;
  params.add("pred", pred);
  GradCheckResult r = grad_check(params, [&target](Tape& t, const NamedTensorList& p) {
    return mse_op(t, t.param("pred", p.at("pred")), target);
  }, 1e-6);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("gradient clipping scales only above the threshold") {
  GradientMap g;
  g.add("a", Tensor({2}, {3.0, 4.0}));

  GradientMap under = g;
  const double norm = clip_grad_norm(under, 10.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(under.at("a").vec() == std::vector<double>{3.0, 4.0});

  GradientMap over = g;
  clip_grad_norm(over, 1.0);
  CHECK(over.at("a")[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(over.at("a")[1] == doctest::Approx(0.8).epsilon(1e-15));

  // idempotence
  GradientMap twice = over;
  clip_grad_norm(twice, 1.0);
  CHECK(bitwise_equal(twice.at("a"), over.at("a")));
}

TEST_CASE("post-clip global norm never exceeds the threshold") {
  Rng rng = derive_rng(64, 0);
  for (int rep = 0; rep < 30; ++rep) {
    GradientMap g;
    g.add("a", Tensor({5}));
    g.add("b", Tensor({3, 3}));
    for (std::size_t e = 0; e < g.size(); ++e) {
      Tensor& t = g.entry(e).second;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, -10.0, 10.0);
    }
    const double max_norm = uniform(rng, 0.1, 5.0);
    clip_grad_norm(g, max_norm);
    double sq = 0.0;
    for (std::size_t e = 0; e < g.size(); ++e) {
      const Tensor& t = g.entry(e).second;
      for (std::size_t i = 0; i < t.size(); ++i) sq += t[i] * t[i];
    }
    CHECK(std::sqrt(sq) <= max_norm + 1e-12);
  }
}

TEST_CASE("adam first step with bias correction") {
  ModelParams params;
  params.add("w", Tensor({1}, {0.0}));
  GradientMap grads;
  grads.add("w", Tensor({1}, {1.0}));
  AdamState state = make_adam_state(params, 0.001);
  adam_step(params, grads, state);
  CHECK(params.at("w")[0] == doctest::Approx(-0.001).epsilon(1e-7));
}

TEST_CASE("adam leaves parameters alone on zero gradients from rest") {
  ModelParams params;
  params.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
  GradientMap grads;
  grads.add("w", Tensor::zeros({3}));
  AdamState state = make_adam_state(params, 0.01);
  adam_step(params, grads, state);
  CHECK(params.at("w").vec() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("identical gradients produce identical updates") {
  ModelParams params;
  params.add("a", Tensor({2}, {0.3, 0.3}));
  params.add("b", Tensor({2}, {0.3, 0.3}));
  GradientMap grads;
  grads.add("a", Tensor({2}, {0.7, 0.7}));
  grads.add("b", Tensor({2}, {0.7, 0.7}));
  AdamState state = make_adam_state(params, 0.01);
  adam_step(params, grads, state);
  CHECK(params.at("a").vec() == params.at("b").vec());
}

TEST_CASE("training on a synthetic basin") {
  const SyntheticBasin basin = generate_synthetic_basin(tiny_basin_spec(11));
  TrainConfig config = tiny_train_config();

  SUBCASE("cnn-lstm runs and records one loss pair per epoch") {
    PreparedData data =
        prepare_dataset(ModelKind::kCnnLstm, basin.precip, basin.temp, basin.gauge, config);
    TrainResult result = train(ModelKind::kCnnLstm, data, config);
    CHECK(result.history.size() == config.epochs);
    for (const EpochRecord& r : result.history) {
      CHECK(std::isfinite(r.train_loss));
      CHECK(std::isfinite(r.val_loss));
    }
  }

  SUBCASE("fixed seed gives bitwise-identical runs") {
    PreparedData data =
        prepare_dataset(ModelKind::kLstmBaseline, basin.precip, basin.temp, basin.gauge,
                        config);
    TrainResult a = train(ModelKind::kLstmBaseline, data, config);
    TrainResult b = train(ModelKind::kLstmBaseline, data, config);
    CHECK(params_bitwise_equal(a.params, b.params));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(std::memcmp(&a.history[i].train_loss, &b.history[i].train_loss, 8) == 0);
      CHECK(std::memcmp(&a.history[i].val_loss, &b.history[i].val_loss, 8) == 0);
    }
  }

  SUBCASE("epochs must be positive") {
    PreparedData data =
        prepare_dataset(ModelKind::kLstmBaseline, basin.precip, basin.temp, basin.gauge,
                        config);
    TrainConfig bad = config;
    bad.epochs = 0;
    CHECK_THROWS_AS(train(ModelKind::kLstmBaseline, data, bad), ConfigError);
  }

  SUBCASE("one epoch with batch >= n is a single step regardless of batch size") {
    PreparedData data =
        prepare_dataset(ModelKind::kLstmBaseline, basin.precip, basin.temp, basin.gauge,
                        config);
    TrainConfig one = config;
    one.epochs = 1;
    one.batch_size = data.split.n_train();
    TrainConfig bigger = one;
    bigger.batch_size = 10 * data.split.n_train();
    TrainResult a = train(ModelKind::kLstmBaseline, data, one);
    TrainResult b = train(ModelKind::kLstmBaseline, data, bigger);
    CHECK(params_bitwise_equal(a.params, b.params));
  }
}

TEST_CASE("training loss decreases on a learnable signal") {
  const SyntheticBasin basin = generate_synthetic_basin(tiny_basin_spec(13, 400));
  TrainConfig config = tiny_train_config(30);
  config.epochs = 15;
  PreparedData data =
      prepare_dataset(ModelKind::kLstmBaseline, basin.precip, basin.temp, basin.gauge, config);
  TrainResult result = train(ModelKind::kLstmBaseline, data, config);
  CHECK(result.history.back().train_loss < result.history.front().train_loss);
}

TEST_CASE("no value outside the training period reaches the scalers") {
  const SyntheticBasin basin = generate_synthetic_basin(tiny_basin_spec(17));
  TrainConfig config = tiny_train_config();

  for (ModelKind kind : {ModelKind::kCnnLstm, ModelKind::kLstmBaseline}) {
    PreparedData clean =
        prepare_dataset(kind, basin.precip, basin.temp, basin.gauge, config);

    // Poison every value after the training period with 1e9.
    const std::size_t train_days = config.lookback + clean.split.n_train();
    SyntheticBasin poisoned = basin;
    const std::size_t cells = basin.precip.height * basin.precip.width;
    for (std::size_t t = train_days; t < basin.precip.days; ++t) {
      for (std::size_t c = 0; c < cells; ++c) {
        poisoned.precip.values[t * cells + c] = 1e9;
        poisoned.temp.values[t * cells + c] = 1e9;
      }
      poisoned.gauge.discharge[t] = 1e9;
    }

    PreparedData dirty =
        prepare_dataset(kind, poisoned.precip, poisoned.temp, poisoned.gauge, config);
    CHECK(std::memcmp(&clean.precip_scaler, &dirty.precip_scaler, sizeof(Scaler)) == 0);
    CHECK(std::memcmp(&clean.temp_scaler, &dirty.temp_scaler, sizeof(Scaler)) == 0);
    CHECK(std::memcmp(&clean.flow_scaler, &dirty.flow_scaler, sizeof(Scaler)) == 0);
  }
}

TEST_CASE("all-zero dense layer reproduces the mse(0, targets) baseline") {
  const SyntheticBasin basin = generate_synthetic_basin(tiny_basin_spec(19));
  TrainConfig config = tiny_train_config();
  PreparedData data =
      prepare_dataset(ModelKind::kLstmBaseline, basin.precip, basin.temp, basin.gauge, config);

  Rng rng = derive_rng(3, 3);
  LstmBaselineConfig mc;
  mc.lookback = config.lookback;
  mc.lstm_hidden = config.lstm_hidden;
  ModelParams params = build_lstm_baseline(mc, rng);
  Tensor& w = params.at("dense.weight");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;

  std::vector<double> preds =
      predict_range(params, data, config, 0, data.split.train_end);
  for (double p : preds) CHECK(p == 0.0);

  std::vector<double> zeros(preds.size(), 0.0);
  std::span<const double> targets(data.targets_std.data(), preds.size());
  CHECK(mse_loss(preds, targets) == mse_loss(zeros, targets));
}

TEST_CASE("prepare_dataset rejects series shorter than the lookback") {
  const SyntheticBasin basin = generate_synthetic_basin(tiny_basin_spec(23, 50));
  TrainConfig config = tiny_train_config(60);
  CHECK_THROWS_AS(
      prepare_dataset(ModelKind::kLstmBaseline, basin.precip, basin.temp, basin.gauge, config),
      DataError);
}
