#include "commands.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "flowcast/checkpoint.hpp"
#include "flowcast/config.hpp"
#include "flowcast/data.hpp"
#include "flowcast/dates.hpp"
#include "flowcast/errors.hpp"
#include "flowcast/metrics.hpp"
#include "flowcast/training.hpp"

namespace flowcast::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

void write_kge_csv(const fs::path& path, const std::string& basin, const std::string& model,
                   const KgeComponents& k) {
  std::ofstream out = open_out(path);
  out << "basin,model,partition,r,beta,gamma,kge\n";
  out << basin << "," << model << ",test," << fmt(k.r) << "," << fmt(k.beta) << ","
      << fmt(k.gamma) << "," << fmt(k.kge) << "\n";
}

struct LoadedData {
  GridSeries precip;
  GridSeries temp;
  GaugeSeries gauge;
};

LoadedData load_data(const std::string& precip, const std::string& temp,
                     const std::string& gauge) {
  return LoadedData{load_grid_series(precip), load_grid_series(temp),
                    load_gauge_series(gauge)};
}

struct Evaluation {
  KgeComponents kge_components;
  std::vector<double> predicted;   // physical units, test partition
  std::vector<double> observed;
  std::vector<std::string> dates;
};

Evaluation evaluate_on_test(const ModelParams& params, const PreparedData& data,
                            const TrainConfig& config, const std::string& start_date) {
  Evaluation eval;
  const std::size_t first = data.split.val_end;
  const std::size_t last = data.split.test_end;
  const std::vector<double> scaled = predict_range(params, data, config, first, last);
  eval.predicted.resize(scaled.size());
  eval.observed.resize(scaled.size());
  eval.dates.resize(scaled.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    eval.predicted[i] = inverse_scale(scaled[i], data.flow_scaler);
    eval.observed[i] = data.targets_raw[first + i];
    eval.dates[i] = date_plus_days(
        start_date, static_cast<std::int64_t>(data.lookback + first + i));
  }
  eval.kge_components = kge(eval.predicted, eval.observed);
  return eval;
}

}  // namespace

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  const SyntheticBasinSpec spec = load_synth_spec(spec_path);
  const SyntheticBasin basin = generate_synthetic_basin(spec);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_grid_series(basin.precip, (dir / "precip.grid").string());
  save_grid_series(basin.temp, (dir / "temp.grid").string());
  save_gauge_series(basin.gauge, (dir / "gauge.csv").string());

  std::cout << "synth: wrote " << spec.days << " days on a " << spec.height << "x"
            << spec.width << " grid to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  const RunConfig config = load_run_config(config_path);
  validate_run_config(config);
  const ModelKind kind = model_kind_from_string(config.model);
  const TrainConfig tconfig = train_config_of(config);

  const LoadedData raw = load_data(config.precip, config.temp, config.gauge);
  const PreparedData data = prepare_dataset(kind, raw.precip, raw.temp, raw.gauge, tconfig);

  std::cout << "train: basin " << config.basin << ", model " << config.model << ", "
            << data.n_samples << " samples (train " << data.split.n_train() << ", val "
            << data.split.n_val() << ", test " << data.split.n_test() << ")\n";

  TrainResult result = train(kind, data, tconfig);
  const Evaluation eval = evaluate_on_test(result.params, data, tconfig,
                                           raw.precip.start_date);

  fs::create_directories(config.out_dir);
  const fs::path dir(config.out_dir);

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.precip_scaler = data.precip_scaler;
  ckpt.temp_scaler = data.temp_scaler;
  ckpt.flow_scaler = data.flow_scaler;
  ckpt.history = result.history;
  ckpt.test_kge = eval.kge_components;
  ckpt.params = std::move(result.params);
  save_checkpoint(ckpt, (dir / "checkpoint.ckpt").string());

  {
    std::ofstream out = open_out(dir / "history.csv");
    out << "epoch,train_loss,val_loss\n";
    for (const EpochRecord& r : result.history) {
      out << r.epoch << "," << fmt(r.train_loss) << "," << fmt(r.val_loss) << "\n";
    }
  }
  write_kge_csv(dir / "metrics.csv", config.basin, config.model, eval.kge_components);

  const EpochRecord& last = result.history.back();
  std::cout << "train: final train_loss " << fmt(last.train_loss) << ", val_loss "
            << fmt(last.val_loss) << "\n";
  std::cout << "train: test KGE " << fmt(eval.kge_components.kge) << " (r "
            << fmt(eval.kge_components.r) << ", beta " << fmt(eval.kge_components.beta)
            << ", gamma " << fmt(eval.kge_components.gamma) << ")\n";
  std::cout << "train: checkpoint " << (dir / "checkpoint.ckpt").string() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& precip_override,
                 const std::string& temp_override, const std::string& gauge_override,
                 const std::string& out_dir_override) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const ModelKind kind = model_kind_from_string(ckpt.config.model);
  const TrainConfig tconfig = train_config_of(ckpt.config);

  const std::string precip = precip_override.empty() ? ckpt.config.precip : precip_override;
  const std::string temp = temp_override.empty() ? ckpt.config.temp : temp_override;
  const std::string gauge = gauge_override.empty() ? ckpt.config.gauge : gauge_override;
  for (const std::string& path : {precip, temp, gauge}) {
    if (!fs::exists(path)) throw DataError("data file not found: '" + path + "'");
  }

  const LoadedData raw = load_data(precip, temp, gauge);
  const PreparedData data =
      prepare_dataset_with_scalers(kind, raw.precip, raw.temp, raw.gauge, tconfig,
                                   ckpt.precip_scaler, ckpt.temp_scaler, ckpt.flow_scaler);
  const Evaluation eval = evaluate_on_test(ckpt.params, data, tconfig,
                                           raw.precip.start_date);

  const std::string out_dir = out_dir_override.empty() ? ckpt.config.out_dir
                                                       : out_dir_override;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_kge_csv(dir / "kge.csv", ckpt.config.basin, ckpt.config.model, eval.kge_components);
  {
    std::ofstream out = open_out(dir / "predictions.csv");
    out << "date,observed,predicted\n";
    for (std::size_t i = 0; i < eval.predicted.size(); ++i) {
      out << eval.dates[i] << "," << fmt(eval.observed[i]) << "," << fmt(eval.predicted[i])
          << "\n";
    }
  }

  std::cout << "evaluate: basin " << ckpt.config.basin << ", model " << ckpt.config.model
            << ", test KGE " << fmt(eval.kge_components.kge) << " (r "
            << fmt(eval.kge_components.r) << ", beta " << fmt(eval.kge_components.beta)
            << ", gamma " << fmt(eval.kge_components.gamma) << ")\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& checkpoint_paths, const std::string& out_dir) {
  if (checkpoint_paths.size() < 2 || checkpoint_paths.size() % 2 != 0) {
    throw ConfigError("compare: expected an even number of checkpoints (lstm/cnn-lstm pairs)");
  }

  // Group by basin; each basin needs exactly one checkpoint per model kind.
  std::map<std::string, BasinResult> by_basin;
  std::map<std::string, int> seen;
  std::vector<std::string> order;
  for (const std::string& path : checkpoint_paths) {
    const Checkpoint ckpt = load_checkpoint(path);
    const std::string& basin = ckpt.config.basin;
    if (!by_basin.count(basin)) {
      by_basin[basin] = BasinResult{basin, {}, {}};
      seen[basin] = 0;
      order.push_back(basin);
    }
    if (ckpt.config.model == "lstm") {
      by_basin[basin].lstm = ckpt.test_kge;
      seen[basin] |= 1;
    } else {
      by_basin[basin].cnn_lstm = ckpt.test_kge;
      seen[basin] |= 2;
    }
  }
  std::vector<BasinResult> results;
  for (const std::string& basin : order) {
    if (seen[basin] != 3) {
      throw DataError("compare: basin '" + basin +
                      "' needs exactly one lstm and one cnn-lstm checkpoint");
    }
    results.push_back(by_basin[basin]);
  }

  const ComparisonSummary summary = compare_report(results);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  {
    std::ofstream out = open_out(dir / "comparison.csv");
    out << "basin,lstm_kge,cnn_lstm_kge,delta\n";
    for (const ComparisonRow& row : summary.rows) {
      out << row.basin << "," << fmt(row.lstm_kge) << "," << fmt(row.cnn_lstm_kge) << ","
          << fmt(row.delta) << "\n";
    }
  }
  {
    std::ofstream out = open_out(dir / "summary.csv");
    out << "basin_count,median_lstm,median_cnn_lstm,improved_count,improved_fraction,"
           "best_basin,best_from,best_to\n";
    out << summary.basin_count << "," << fmt(summary.median_lstm) << ","
        << fmt(summary.median_cnn_lstm) << "," << summary.improved_count << ","
        << fmt(summary.improved_fraction) << "," << summary.best_improvement.basin << ","
        << fmt(summary.best_improvement.lstm_kge) << ","
        << fmt(summary.best_improvement.cnn_lstm_kge) << "\n";
  }

  std::cout << format_comparison(summary);
  return 0;
}

int cmd_grad_check(const GradCheckOptions& options) {
  if (options.model != "lstm" && options.model != "cnn-lstm" && options.model != "both") {
    throw ConfigError("grad-check: model must be lstm, cnn-lstm or both");
  }
  if (options.grid < 3) throw ConfigError("grad-check: grid must be >= 3");
  if (options.lookback == 0 || options.hidden == 0) {
    throw ConfigError("grad-check: lookback and hidden must be >= 1");
  }

  bool all_pass = true;
  Rng rng = derive_rng(options.seed, /*tag=*/30);

  if (options.model != "lstm") {
    CnnLstmConfig config;
    config.lookback = options.lookback;
    config.height = options.grid;
    config.width = options.grid;
    config.lstm_hidden = options.hidden;
    ModelParams params = build_cnn_lstm(config, rng);
    Tensor video({config.lookback, 3, config.height, config.width});
    for (std::size_t i = 0; i < video.size(); ++i) video[i] = normal01(rng);
    const double target = normal01(rng);
    const GradCheckResult r = grad_check(
        params, make_cnn_lstm_loss(config, video, target, true, options.seed),
        options.epsilon);
    const bool pass = r.max_rel_error < options.threshold;
    all_pass = all_pass && pass;
    std::cout << "grad-check cnn-lstm: max_rel_error " << fmt(r.max_rel_error) << " at "
              << r.worst_param << "[" << r.worst_index << "] "
              << (pass ? "PASS" : "FAIL") << "\n";
  }
  if (options.model != "cnn-lstm") {
    LstmBaselineConfig config;
    config.lookback = options.lookback;
    config.lstm_hidden = options.hidden;
    ModelParams params = build_lstm_baseline(config, rng);
    Tensor sequence({config.lookback, config.features});
    for (std::size_t i = 0; i < sequence.size(); ++i) sequence[i] = normal01(rng);
    const double target = normal01(rng);
    const GradCheckResult r = grad_check(
        params, make_lstm_baseline_loss(config, sequence, target, true, options.seed),
        options.epsilon);
    const bool pass = r.max_rel_error < options.threshold;
    all_pass = all_pass && pass;
    std::cout << "grad-check lstm: max_rel_error " << fmt(r.max_rel_error) << " at "
              << r.worst_param << "[" << r.worst_index << "] "
              << (pass ? "PASS" : "FAIL") << "\n";
  }
  return all_pass ? 0 : kExitNumericError;
}

}  // namespace flowcast::cli
