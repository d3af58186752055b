// Acceptance suite: nine criteria covering gradient fidelity, the default
// shape contract, the KGE metric, leakage/split discipline, sample
// invariants, synthetic-basin convergence of both architectures, the
// comparison harness, end-to-end determinism through the CLI, and the
// reservoir mass-closure oracle. Prints one PASS/FAIL line per criterion;
// the exit code is the number of failures.
//
// The convergence criterion trains ten full models and dominates the
// runtime. Run a subset with e.g. `acceptance --criterion 3 --criterion 9`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "flowcast/autodiff.hpp"
#include "flowcast/checkpoint.hpp"
#include "flowcast/data.hpp"
#include "flowcast/layers.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/model.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/training.hpp"

using namespace flowcast;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Criterion {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << (detail.str().empty() ? "" : "; ") << what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity: each layer in isolation plus both full architectures
//    at reduced scale, against central finite differences.

Criterion criterion_gradients() {
  Criterion c;
  const auto t0 = Clock::now();
  const double eps = 1e-5;
  const double tol = 1e-4;
  Rng rng = derive_rng(501, 0);

  auto check = [&](const char* name, const NamedTensorList& params, const LossFn& fn,
                   double epsilon = 1e-5) {
    GradCheckResult r = grad_check(params, fn, epsilon);
    c.expect(r.max_rel_error < tol,
             std::string(name) + " rel err " + std::to_string(r.max_rel_error));
  };

  {
    NamedTensorList p;
    p.add("x", random_tensor({2, 3, 5, 4}, rng));
    p.add("w", random_tensor({4, 3, 3, 3}, rng));
    p.add("b", random_tensor({4}, rng));
    check("conv2d", p, [](Tape& t, const NamedTensorList& p) {
      Var y = conv2d(t, t.param("x", p.at("x")), t.param("w", p.at("w")),
                     t.param("b", p.at("b")), {1, 1});
      return t.sum(t.multiply(y, y));
    });
  }
  {
    NamedTensorList p;
    p.add("x", random_tensor({3, 4, 5}, rng));
    check("maxpool2d", p, [](Tape& t, const NamedTensorList& p) {
      Var y = maxpool2d(t, t.param("x", p.at("x")), 2, 2, 1);
      return t.sum(t.multiply(y, y));
    }, 1e-6);
  }
  {
    NamedTensorList p;
    p.add("x", random_tensor({5, 4}, rng));
    p.add("w", random_tensor({2, 4}, rng));
    p.add("b", random_tensor({2}, rng));
    check("dense", p, [](Tape& t, const NamedTensorList& p) {
      Var y = dense(t, t.param("x", p.at("x")), t.param("w", p.at("w")),
                    t.param("b", p.at("b")));
      return t.mean(t.multiply(y, y));
    });
  }
  {
    NamedTensorList p;
    p.add("x", random_tensor({60}, rng));
    check("dropout", p, [](Tape& t, const NamedTensorList& p) {
      Rng mask_rng = derive_rng(502, 1);
      Var y = dropout(t, t.param("x", p.at("x")), 0.3, true, mask_rng);
      return t.sum(t.multiply(y, y));
    });
  }
  {
    // one LSTM layer over a short sequence, all twelve gate parameters
    NamedTensorList p;
    const std::size_t input = 3, hidden = 4;
    for (const char* g : {"W_f", "W_i", "W_o", "W_g"})
      p.add(g, random_tensor({hidden, input}, rng, -0.5, 0.5));
    for (const char* g : {"U_f", "U_i", "U_o", "U_g"})
      p.add(g, random_tensor({hidden, hidden}, rng, -0.5, 0.5));
    for (const char* g : {"b_f", "b_i", "b_o", "b_g"})
      p.add(g, random_tensor({hidden}, rng, -0.5, 0.5));
    p.add("xs", random_tensor({6, input}, rng));
    check("lstm", p, [](Tape& t, const NamedTensorList& p) {
      LstmGateVars g{t.param("W_f", p.at("W_f")), t.param("W_i", p.at("W_i")),
                     t.param("W_o", p.at("W_o")), t.param("W_g", p.at("W_g")),
                     t.param("U_f", p.at("U_f")), t.param("U_i", p.at("U_i")),
                     t.param("U_o", p.at("U_o")), t.param("U_g", p.at("U_g")),
                     t.param("b_f", p.at("b_f")), t.param("b_i", p.at("b_i")),
                     t.param("b_o", p.at("b_o")), t.param("b_g", p.at("b_g"))};
      Var h = lstm_sequence(t, t.param("xs", p.at("xs")), g);
      return t.sum(t.multiply(h, h));
    });
  }

  // full architectures at grid 3x3, L=3, hidden 4
  {
    CnnLstmConfig config;
    config.lookback = 3;
    config.height = 3;
    config.width = 3;
    config.lstm_hidden = 4;
    ModelParams params = build_cnn_lstm(config, rng);
    Tensor video({3, 3, 3, 3});
    for (std::size_t i = 0; i < video.size(); ++i) video[i] = normal01(rng);
    GradCheckResult r =
        grad_check(params, make_cnn_lstm_loss(config, video, 0.3, true, 503), eps);
    c.expect(r.max_rel_error < tol,
             "cnn-lstm rel err " + std::to_string(r.max_rel_error));
  }
  {
    LstmBaselineConfig config;
    config.lookback = 3;
    config.lstm_hidden = 4;
    ModelParams params = build_lstm_baseline(config, rng);
    Tensor seq({3, 3});
    for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = normal01(rng);
    GradCheckResult r =
        grad_check(params, make_lstm_baseline_loss(config, seq, -0.4, true, 504), eps);
    c.expect(r.max_rel_error < tol, "lstm rel err " + std::to_string(r.max_rel_error));
  }

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 60.0, "runtime " + std::to_string(elapsed) + " s exceeds 60 s");
  c.detail << (c.detail.str().empty() ? "" : "; ") << "elapsed "
           << static_cast<int>(elapsed * 1000) << " ms";
  return c;
}

// ---------------------------------------------------------------------------
// 2. encoder shape contract on a default-sized input.

Criterion criterion_shape_contract() {
  Criterion c;
  Rng rng = derive_rng(510, 0);
  CnnLstmConfig config;  // defaults: lookback 182, hidden 80, dropout 0.3
  config.height = 8;
  config.width = 8;
  ModelParams params = build_cnn_lstm(config, rng);

  Tensor video({182, 3, 8, 8});
  for (std::size_t i = 0; i < video.size(); ++i) video[i] = normal01(rng);

  ForwardProbe probe;
  const double out = forward_cnn_lstm(params, config, video, &probe);
  c.expect(probe.frame_vectors == 182,
           "frame vectors " + std::to_string(probe.frame_vectors));
  c.expect(probe.feature_len == 2048, "feature length " + std::to_string(probe.feature_len));
  c.expect(std::isfinite(out), "output not finite");
  c.detail << "182 x " << probe.feature_len << " -> scalar " << out;
  return c;
}

// ---------------------------------------------------------------------------
// 3. KGE suite against an independent brute-force implementation.

struct BruteKge {
  double r, beta, gamma, kge;
};

BruteKge brute_force_kge(const std::vector<double>& sim, const std::vector<double>& obs) {
  const std::size_t n = sim.size();
  double ms = 0.0, mo = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ms += sim[i] / n;
    mo += obs[i] / n;
  }
  double vs = 0.0, vo = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    vs += (sim[i] - ms) * (sim[i] - ms) / n;
    vo += (obs[i] - mo) * (obs[i] - mo) / n;
    cov += (sim[i] - ms) * (obs[i] - mo) / n;
  }
  BruteKge out{};
  out.r = cov / (std::sqrt(vs) * std::sqrt(vo));
  out.beta = ms / mo;
  out.gamma = (std::sqrt(vs) / ms) / (std::sqrt(vo) / mo);
  out.kge = 1.0 - std::sqrt(std::pow(out.r - 1.0, 2) + std::pow(out.beta - 1.0, 2) +
                            std::pow(out.gamma - 1.0, 2));
  return out;
}

Criterion criterion_kge() {
  Criterion c;
  Rng rng = derive_rng(520, 0);

  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> x(50);
    for (double& v : x) v = uniform(rng, 0.5, 20.0);
    c.expect(std::fabs(kge(x, x).kge - 1.0) < 1e-12, "kge(x,x) != 1");
  }

  std::vector<double> obs{1, 2, 3};
  std::vector<double> twice{2, 4, 6};
  c.expect(std::fabs(kge(twice, obs).kge - 0.0) < 1e-12, "beta=2 case != 0");

  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 10 + bounded(rng, 300);
    std::vector<double> o(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = uniform(rng, 0.2, 15.0);
      s[i] = uniform(rng, 0.2, 15.0);
    }
    KgeComponents k = kge(s, o);
    BruteKge b = brute_force_kge(s, o);
    worst = std::max({worst, std::fabs(k.kge - b.kge), std::fabs(k.r - b.r),
                      std::fabs(k.beta - b.beta), std::fabs(k.gamma - b.gamma)});
  }
  c.expect(worst < 1e-10, "brute-force deviation " + std::to_string(worst));
  c.detail << "max |impl - oracle| " << worst;
  return c;
}

// ---------------------------------------------------------------------------
// 4. Leakage and split discipline.

Criterion criterion_leakage() {
  Criterion c;
  SyntheticBasinSpec spec;
  spec.height = 5;
  spec.width = 5;
  spec.days = 320;
  spec.seed = 531;
  const SyntheticBasin basin = generate_synthetic_basin(spec);

  TrainConfig config;
  config.lookback = 30;
  config.lstm_hidden = 8;

  for (ModelKind kind : {ModelKind::kCnnLstm, ModelKind::kLstmBaseline}) {
    PreparedData clean = prepare_dataset(kind, basin.precip, basin.temp, basin.gauge, config);
    const std::size_t train_days = config.lookback + clean.split.n_train();

    SyntheticBasin poisoned = basin;
    const std::size_t cells = spec.height * spec.width;
    for (std::size_t t = train_days; t < spec.days; ++t) {
      for (std::size_t cc = 0; cc < cells; ++cc) {
        poisoned.precip.values[t * cells + cc] = 1e9;
        poisoned.temp.values[t * cells + cc] = 1e9;
      }
      poisoned.gauge.discharge[t] = 1e9;
    }
    PreparedData dirty =
        prepare_dataset(kind, poisoned.precip, poisoned.temp, poisoned.gauge, config);
    c.expect(std::memcmp(&clean.precip_scaler, &dirty.precip_scaler, sizeof(Scaler)) == 0 &&
                 std::memcmp(&clean.temp_scaler, &dirty.temp_scaler, sizeof(Scaler)) == 0 &&
                 std::memcmp(&clean.flow_scaler, &dirty.flow_scaler, sizeof(Scaler)) == 0,
             std::string("scaler changed under poisoning (") + model_kind_name(kind) + ")");
  }

  Rng rng = derive_rng(532, 0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 10 + bounded(rng, 4000);
    SplitIndices s = chronological_split(n, 0.7, 0.3);
    c.expect(s.train_end > 0 && s.train_end < s.val_end && s.val_end < s.test_end &&
                 s.test_end == n,
             "split not chronological/disjoint/covering at n=" + std::to_string(n));
  }
  return c;
}

// ---------------------------------------------------------------------------
// 5. Streamflow-channel constancy and causality on generated samples.

Criterion criterion_samples() {
  Criterion c;
  SyntheticBasinSpec spec;
  spec.height = 6;
  spec.width = 7;
  spec.days = 420;
  spec.seed = 541;
  const SyntheticBasin basin = generate_synthetic_basin(spec);

  const std::size_t lookback = 182;
  std::vector<Sample> samples =
      make_video_samples(basin.precip, basin.temp, basin.gauge, lookback);
  c.expect(samples.size() == spec.days - lookback, "sample count");

  const std::size_t cells = spec.height * spec.width;
  for (const Sample& s : samples) {
    c.expect(s.target_day >= lookback, "window before day 0");
    for (std::size_t j = 0; j < lookback; ++j) {
      const std::size_t day = s.target_day - lookback + j;
      c.expect(day < s.target_day, "window touches the target day");
      const double* flow = s.video.data() + (j * 3 + 2) * cells;
      double lo = flow[0], hi = flow[0];
      for (std::size_t cc = 0; cc < cells; ++cc) {
        lo = std::min(lo, flow[cc]);
        hi = std::max(hi, flow[cc]);
      }
      if (hi - lo != 0.0) {
        c.expect(false, "streamflow channel spread " + std::to_string(hi - lo));
        return c;
      }
      if (flow[0] != basin.gauge.discharge[day]) {
        c.expect(false, "streamflow channel is not the lagged discharge");
        return c;
      }
    }
  }
  c.detail << samples.size() << " samples, spread exactly 0";
  return c;
}

// ---------------------------------------------------------------------------
// 6. Synthetic convergence at full scale: one fixed basin, five training
//    seeds, both architectures trained with the default regimen.

Criterion criterion_convergence() {
  Criterion c;
  SyntheticBasinSpec spec;  // defaults: 8x8, 3000 days, heterogeneous k and phi
  spec.seed = 7001;
  const SyntheticBasin basin = generate_synthetic_basin(spec);

  const std::uint64_t seeds[] = {1, 2, 3, 4, 5};
  int passes = 0;
  for (std::uint64_t seed : seeds) {
    TrainConfig config;  // defaults: 100 epochs, batch 50, L=182, hidden 80
    config.seed = seed;

    const auto t0 = Clock::now();
    PreparedData cnn_data =
        prepare_dataset(ModelKind::kCnnLstm, basin.precip, basin.temp, basin.gauge, config);
    TrainResult cnn = train(ModelKind::kCnnLstm, cnn_data, config);
    std::vector<double> cnn_scaled = predict_range(cnn.params, cnn_data, config,
                                                   cnn_data.split.val_end,
                                                   cnn_data.split.test_end);
    std::vector<double> cnn_pred(cnn_scaled.size());
    std::vector<double> observed(cnn_scaled.size());
    for (std::size_t i = 0; i < cnn_scaled.size(); ++i) {
      cnn_pred[i] = inverse_scale(cnn_scaled[i], cnn_data.flow_scaler);
      observed[i] = cnn_data.targets_raw[cnn_data.split.val_end + i];
    }
    const double cnn_kge = kge(cnn_pred, observed).kge;

    PreparedData lstm_data = prepare_dataset(ModelKind::kLstmBaseline, basin.precip,
                                             basin.temp, basin.gauge, config);
    TrainResult lstm = train(ModelKind::kLstmBaseline, lstm_data, config);
    std::vector<double> lstm_scaled = predict_range(lstm.params, lstm_data, config,
                                                    lstm_data.split.val_end,
                                                    lstm_data.split.test_end);
    std::vector<double> lstm_pred(lstm_scaled.size());
    for (std::size_t i = 0; i < lstm_scaled.size(); ++i) {
      lstm_pred[i] = inverse_scale(lstm_scaled[i], lstm_data.flow_scaler);
    }
    const double lstm_kge = kge(lstm_pred, observed).kge;

    const bool seed_pass = cnn_kge >= 0.8 && lstm_kge >= 0.6;
    passes += seed_pass;
    std::printf("        seed %llu: cnn-lstm KGE %.4f, lstm KGE %.4f -> %s (%.0f s)\n",
                static_cast<unsigned long long>(seed), cnn_kge, lstm_kge,
                seed_pass ? "pass" : "fail", seconds_since(t0));
    std::fflush(stdout);
  }
  c.expect(passes >= 4, "only " + std::to_string(passes) + "/5 seeds passed");
  c.detail << passes << "/5 seeds passed (cnn-lstm >= 0.8, lstm >= 0.6)";
  return c;
}

// ---------------------------------------------------------------------------
// 7. Comparison harness over a five-basin synthetic suite.

Criterion criterion_comparison() {
  Criterion c;
  std::vector<BasinResult> results;

  for (std::uint64_t basin_seed : {21ull, 22ull, 23ull, 24ull, 25ull}) {
    SyntheticBasinSpec spec;
    spec.height = 6;
    spec.width = 6;
    spec.days = 900;
    spec.seed = basin_seed;
    const SyntheticBasin basin = generate_synthetic_basin(spec);

    TrainConfig config;
    config.epochs = 30;
    config.lookback = 90;
    config.lstm_hidden = 32;
    config.seed = basin_seed;

    BasinResult result;
    result.basin = "basin" + std::to_string(basin_seed);

    for (ModelKind kind : {ModelKind::kLstmBaseline, ModelKind::kCnnLstm}) {
      PreparedData data = prepare_dataset(kind, basin.precip, basin.temp, basin.gauge, config);
      TrainResult trained = train(kind, data, config);
      std::vector<double> scaled = predict_range(trained.params, data, config,
                                                 data.split.val_end, data.split.test_end);
      std::vector<double> pred(scaled.size());
      std::vector<double> obs(scaled.size());
      for (std::size_t i = 0; i < scaled.size(); ++i) {
        pred[i] = inverse_scale(scaled[i], data.flow_scaler);
        obs[i] = data.targets_raw[data.split.val_end + i];
      }
      KgeComponents k = kge(pred, obs);
      if (kind == ModelKind::kLstmBaseline) {
        result.lstm = k;
      } else {
        result.cnn_lstm = k;
      }
    }
    std::printf("        %s: lstm %.4f, cnn-lstm %.4f\n", result.basin.c_str(),
                result.lstm.kge, result.cnn_lstm.kge);
    std::fflush(stdout);
    results.push_back(result);
  }

  const ComparisonSummary summary = compare_report(results);
  c.expect(summary.median_cnn_lstm >= summary.median_lstm - 0.02,
           "median cnn-lstm " + std::to_string(summary.median_cnn_lstm) +
               " vs lstm " + std::to_string(summary.median_lstm));

  // the report reproduces the summary fields
  c.expect(summary.basin_count == 5, "basin count");
  std::size_t improved = 0;
  double best_delta = -1e9;
  for (const ComparisonRow& row : summary.rows) {
    if (row.cnn_lstm_kge > row.lstm_kge) ++improved;
    best_delta = std::max(best_delta, row.delta);
  }
  c.expect(improved == summary.improved_count, "improved count mismatch");
  c.expect(std::fabs(summary.improved_fraction - static_cast<double>(improved) / 5.0) <
               1e-12,
           "improved fraction mismatch");
  c.expect(std::fabs(summary.best_improvement.delta - best_delta) < 1e-12,
           "best delta mismatch");
  const std::string text = format_comparison(summary);
  c.expect(text.find("median KGE") != std::string::npos &&
               text.find("improved basins") != std::string::npos &&
               text.find("best improvement") != std::string::npos &&
               text.find(" from ") != std::string::npos,
           "summary text missing fields");
  c.detail << "medians lstm " << summary.median_lstm << " -> cnn-lstm "
           << summary.median_cnn_lstm << ", improved " << summary.improved_count << "/5";
  return c;
}

// ---------------------------------------------------------------------------
// 8. End-to-end determinism through the CLI: synth -> train -> evaluate twice,
//    byte-identical outputs.

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Criterion criterion_determinism() {
  Criterion c;
  const fs::path work = fs::temp_directory_path() / "flowcast_acceptance_det";
  fs::remove_all(work);
  fs::create_directories(work);

  {
    std::ofstream spec(work / "synth.cfg");
    spec << "height = 5\nwidth = 5\ndays = 300\nseed = 99\n";
  }
  {
    std::ofstream cfg(work / "run.cfg");
    cfg << "model = lstm\nprecip = " << (work / "data" / "precip.grid").string()
        << "\ntemp = " << (work / "data" / "temp.grid").string()
        << "\ngauge = " << (work / "data" / "gauge.csv").string()
        << "\nout_dir = " << (work / "run").string()
        << "\nlookback = 40\nepochs = 3\nbatch_size = 25\nlstm_hidden = 8\nseed = 12\n";
  }

  auto chain = [&]() -> bool {
    const std::string cli = FLOWCAST_CLI_PATH;
    std::string cmd = cli + " synth --spec " + (work / "synth.cfg").string() + " --out " +
                      (work / "data").string() + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return false;
    cmd = cli + " train --config " + (work / "run.cfg").string() + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return false;
    cmd = cli + " evaluate --checkpoint " + (work / "run" / "checkpoint.ckpt").string() +
          " --out " + (work / "run").string() + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };

  const char* files[] = {"data/precip.grid", "data/temp.grid",   "data/gauge.csv",
                         "run/checkpoint.ckpt", "run/history.csv", "run/metrics.csv",
                         "run/kge.csv",         "run/predictions.csv"};

  c.expect(chain(), "first chain failed");
  std::vector<std::string> first;
  for (const char* f : files) first.push_back(read_bytes(work / f));

  c.expect(chain(), "second chain failed");
  for (std::size_t i = 0; i < std::size(files); ++i) {
    c.expect(read_bytes(work / files[i]) == first[i],
             std::string(files[i]) + " differs between runs");
  }
  fs::remove_all(work);
  c.detail << std::size(files) << " files byte-identical across runs";
  return c;
}

// ---------------------------------------------------------------------------
// 9. Reservoir mass closure with phi = 1.

Criterion criterion_mass_closure() {
  Criterion c;
  SyntheticBasinSpec spec;
  spec.height = 8;
  spec.width = 8;
  spec.days = 1000;
  spec.seed = 591;
  spec.mass_closure_mode = true;
  const SyntheticBasin basin = generate_synthetic_basin(spec);

  RoutingDiagnostics diag;
  route_reservoir(basin.precip, basin.temp, spec, &diag);
  double worst = 0.0;
  for (std::size_t cc = 0; cc < 64; ++cc) {
    const double lhs = diag.cumulative_outflow[cc] + diag.final_storage[cc];
    const double rhs = diag.initial_storage[cc] + diag.cumulative_inflow[cc];
    worst = std::max(worst, std::fabs(lhs - rhs) / std::max(std::fabs(lhs), std::fabs(rhs)));
  }
  c.expect(worst <= 1e-9, "closure error " + std::to_string(worst));
  c.detail << "max relative closure error " << worst;
  return c;
}

struct Entry {
  int number;
  const char* name;
  Criterion (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Entry entries[] = {
      {1, "gradient fidelity", criterion_gradients},
      {2, "encoder shape contract", criterion_shape_contract},
      {3, "KGE suite", criterion_kge},
      {4, "leakage and split", criterion_leakage},
      {5, "streamflow-channel invariant", criterion_samples},
      {6, "synthetic convergence", criterion_convergence},
      {7, "comparison harness", criterion_comparison},
      {8, "end-to-end determinism", criterion_determinism},
      {9, "reservoir mass closure", criterion_mass_closure},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    }
  }

  int failures = 0;
  for (const Entry& entry : entries) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), entry.number) == selected.end()) {
      continue;
    }
    std::printf("[%d/9] %-32s ", entry.number, entry.name);
    std::fflush(stdout);
    const auto t0 = Clock::now();
    Criterion result = entry.run();
    std::printf("%s (%s) [%.1f s]\n", result.pass ? "PASS" : "FAIL",
                result.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
    failures += result.pass ? 0 : 1;
  }
  std::printf("%s: %d failure(s)\n", failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              failures);
  return failures;
}
