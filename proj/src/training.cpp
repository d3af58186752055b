#include "flowcast/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "flowcast/errors.hpp"

namespace flowcast {

SplitIndices chronological_split(std::size_t n_samples, double train_frac, double val_frac) {
  if (!(train_frac > 0.0 && train_frac < 1.0) || !(val_frac > 0.0 && val_frac < 1.0)) {
    throw ConfigError("split: fractions must lie in (0,1)");
  }
  if (n_samples < 10) {
    throw DataError("split: need at least 10 samples, got " + std::to_string(n_samples));
  }
  const std::size_t n_train_total =
      static_cast<std::size_t>(std::floor(static_cast<double>(n_samples) * train_frac));
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(static_cast<double>(n_train_total) * val_frac));
  SplitIndices split;
  split.train_end = n_train_total - n_val;
  split.val_end = n_train_total;
  split.test_end = n_samples;
  if (split.n_train() == 0 || split.n_val() == 0 || split.n_test() == 0) {
    throw DataError("split: a partition is empty with n = " + std::to_string(n_samples));
  }
  return split;
}

Scaler fit_scaler(std::span<const double> values) {
  if (values.size() < 2) {
    throw DataError("scaler: need at least 2 values, got " + std::to_string(values.size()));
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(sq / static_cast<double>(values.size()));
  if (std_dev == 0.0) throw DataError("scaler: feature is constant");
  return Scaler{mean, std_dev};
}

double mse_loss(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("mse: length mismatch " + std::to_string(predictions.size()) + " vs " +
                     std::to_string(targets.size()));
  }
  if (predictions.empty()) throw ShapeError("mse: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - targets[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predictions.size());
}

Var mse_op(Tape& tape, Var predictions, const Tensor& targets) {
  const Tensor& pred = tape.value(predictions);
  if (pred.size() != targets.size()) {
    throw ShapeError("mse: length mismatch " + std::to_string(pred.size()) + " vs " +
                     std::to_string(targets.size()));
  }
  const std::size_t n = pred.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - targets[i];
    sum += d * d;
  }
  Tensor t = targets;
  return tape.emit("mse", Tensor::scalar(sum / static_cast<double>(n)), {predictions},
                   [predictions, t, n](BackwardCtx& ctx) {
                     if (!ctx.needs(predictions)) return;
                     const double g = ctx.grad_out().item() * 2.0 / static_cast<double>(n);
                     Tensor& gp = ctx.slot(predictions);
                     const Tensor& pv = ctx.value(predictions);
                     for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pv[i] - t[i]);
                   });
}

double clip_grad_norm(GradientMap& grads, double max_norm) {
  if (max_norm <= 0.0) throw ConfigError("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (std::size_t e = 0; e < grads.size(); ++e) {
    const Tensor& g = grads.entry(e).second;
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t e = 0; e < grads.size(); ++e) {
      Tensor& g = grads.entry(e).second;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
  }
  return norm;
}

AdamState make_adam_state(const ModelParams& params, double learning_rate, double beta1,
                          double beta2, double epsilon) {
  AdamState state;
  state.learning_rate = learning_rate;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.epsilon = epsilon;
  for (const auto& [name, value] : params.items()) {
    state.m.add(name, Tensor::zeros(value.shape()));
    state.v.add(name, Tensor::zeros(value.shape()));
  }
  return state;
}

void adam_step(ModelParams& params, const GradientMap& grads, AdamState& state) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto [name, theta] = params.entry(e);
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    if (!g.same_shape(theta)) {
      throw ShapeError("adam: gradient shape " + shape_to_string(g.shape()) +
                       " does not match parameter '" + name + "' " +
                       shape_to_string(theta.shape()));
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset preparation

namespace {

PreparedData prepare_dataset_impl(ModelKind kind, const GridSeries& precip,
                                  const GridSeries& temp, const GaugeSeries& gauge,
                                  const TrainConfig& config, const Scaler* fixed_precip,
                                  const Scaler* fixed_temp, const Scaler* fixed_flow) {
  check_alignment(precip, temp, gauge);
  if (config.lookback == 0) throw ConfigError("lookback must be >= 1");
  if (precip.days <= config.lookback) {
    throw DataError("series length " + std::to_string(precip.days) +
                    " does not exceed lookback " + std::to_string(config.lookback));
  }

  PreparedData data;
  data.kind = kind;
  data.lookback = config.lookback;
  data.height = precip.height;
  data.width = precip.width;
  data.total_days = precip.days;
  data.n_samples = precip.days - config.lookback;
  data.split = chronological_split(data.n_samples, config.train_fraction, config.val_fraction);

  // Days visible to training: inputs and targets of training samples.
  const std::size_t train_days = config.lookback + data.split.n_train();

  data.flow_scaler =
      fixed_flow ? *fixed_flow : fit_scaler(std::span(gauge.discharge).first(train_days));
  data.flow_std.resize(precip.days);
  for (std::size_t t = 0; t < precip.days; ++t) {
    data.flow_std[t] = scale(gauge.discharge[t], data.flow_scaler);
  }

  if (kind == ModelKind::kCnnLstm) {
    const std::size_t cells = precip.height * precip.width;
    data.precip_scaler =
        fixed_precip ? *fixed_precip
                     : fit_scaler(std::span(precip.values.vec()).first(train_days * cells));
    data.temp_scaler =
        fixed_temp ? *fixed_temp
                   : fit_scaler(std::span(temp.values.vec()).first(train_days * cells));
    data.precip_std = Tensor(precip.values.shape());
    data.temp_std = Tensor(temp.values.shape());
    for (std::size_t i = 0; i < precip.values.size(); ++i) {
      data.precip_std[i] = scale(precip.values[i], data.precip_scaler);
      data.temp_std[i] = scale(temp.values[i], data.temp_scaler);
    }
  } else {
    const std::vector<double> pmean = basin_average(precip);
    const std::vector<double> tmean = basin_average(temp);
    data.precip_scaler =
        fixed_precip ? *fixed_precip : fit_scaler(std::span(pmean).first(train_days));
    data.temp_scaler =
        fixed_temp ? *fixed_temp : fit_scaler(std::span(tmean).first(train_days));
    data.pmean_std.resize(pmean.size());
    data.tmean_std.resize(tmean.size());
    for (std::size_t t = 0; t < pmean.size(); ++t) {
      data.pmean_std[t] = scale(pmean[t], data.precip_scaler);
      data.tmean_std[t] = scale(tmean[t], data.temp_scaler);
    }
  }

  data.targets_std.resize(data.n_samples);
  data.targets_raw.resize(data.n_samples);
  for (std::size_t i = 0; i < data.n_samples; ++i) {
    data.targets_raw[i] = gauge.discharge[config.lookback + i];
    data.targets_std[i] = data.flow_std[config.lookback + i];
  }
  return data;
}

}  // namespace

PreparedData prepare_dataset(ModelKind kind, const GridSeries& precip, const GridSeries& temp,
                             const GaugeSeries& gauge, const TrainConfig& config) {
  return prepare_dataset_impl(kind, precip, temp, gauge, config, nullptr, nullptr, nullptr);
}

PreparedData prepare_dataset_with_scalers(ModelKind kind, const GridSeries& precip,
                                          const GridSeries& temp, const GaugeSeries& gauge,
                                          const TrainConfig& config, const Scaler& precip_s,
                                          const Scaler& temp_s, const Scaler& flow_s) {
  return prepare_dataset_impl(kind, precip, temp, gauge, config, &precip_s, &temp_s, &flow_s);
}

VideoBatch assemble_video_batch(const PreparedData& data,
                                std::span<const std::size_t> sample_indices) {
  if (data.kind != ModelKind::kCnnLstm) {
    throw ShapeError("assemble_video_batch: dataset was prepared for the lstm baseline");
  }
  const std::size_t lookback = data.lookback;
  const std::size_t cells = data.height * data.width;

  // Distinct days across all windows, ascending.
  std::vector<std::int32_t> day_to_row(data.total_days, -1);
  std::vector<std::size_t> days;
  for (std::size_t idx : sample_indices) {
    for (std::size_t j = 0; j < lookback; ++j) {
      const std::size_t day = idx + j;  // window covers [idx, idx + L)
      if (day_to_row[day] < 0) {
        day_to_row[day] = 0;  // mark
        days.push_back(day);
      }
    }
  }
  std::sort(days.begin(), days.end());
  for (std::size_t r = 0; r < days.size(); ++r) {
    day_to_row[days[r]] = static_cast<std::int32_t>(r);
  }

  VideoBatch batch;
  batch.batch = sample_indices.size();
  batch.frames = Tensor({days.size(), 3, data.height, data.width});
  for (std::size_t r = 0; r < days.size(); ++r) {
    const std::size_t day = days[r];
    double* frame = batch.frames.data() + r * 3 * cells;
    std::memcpy(frame, data.precip_std.data() + day * cells, cells * sizeof(double));
    std::memcpy(frame + cells, data.temp_std.data() + day * cells, cells * sizeof(double));
    const double q = data.flow_std[day];
    for (std::size_t c = 0; c < cells; ++c) frame[2 * cells + c] = q;
  }

  batch.row_of.resize(sample_indices.size() * lookback);
  batch.targets = Tensor({sample_indices.size()});
  for (std::size_t s = 0; s < sample_indices.size(); ++s) {
    const std::size_t idx = sample_indices[s];
    for (std::size_t j = 0; j < lookback; ++j) {
      batch.row_of[s * lookback + j] = day_to_row[idx + j];
    }
    batch.targets[s] = data.targets_std[idx];
  }
  return batch;
}

SequenceBatch assemble_sequence_batch(const PreparedData& data,
                                      std::span<const std::size_t> sample_indices) {
  if (data.kind != ModelKind::kLstmBaseline) {
    throw ShapeError("assemble_sequence_batch: dataset was prepared for the cnn-lstm");
  }
  const std::size_t lookback = data.lookback;
  SequenceBatch batch;
  batch.batch = sample_indices.size();
  batch.sequences = Tensor({sample_indices.size(), lookback, 3});
  batch.targets = Tensor({sample_indices.size()});
  for (std::size_t s = 0; s < sample_indices.size(); ++s) {
    const std::size_t idx = sample_indices[s];
    double* seq = batch.sequences.data() + s * lookback * 3;
    for (std::size_t j = 0; j < lookback; ++j) {
      const std::size_t day = idx + j;
      seq[j * 3 + 0] = data.pmean_std[day];
      seq[j * 3 + 1] = data.tmean_std[day];
      seq[j * 3 + 2] = data.flow_std[day];
    }
    batch.targets[s] = data.targets_std[idx];
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

CnnLstmConfig cnn_config_for(const PreparedData& data, const TrainConfig& config) {
  CnnLstmConfig c;
  c.lookback = data.lookback;
  c.height = data.height;
  c.width = data.width;
  c.lstm_hidden = config.lstm_hidden;
  c.dropout_rate = config.dropout;
  return c;
}

LstmBaselineConfig lstm_config_for(const PreparedData& data, const TrainConfig& config) {
  LstmBaselineConfig c;
  c.lookback = data.lookback;
  c.lstm_hidden = config.lstm_hidden;
  c.dropout_rate = config.dropout;
  return c;
}

double run_batch(ModelKind kind, const ModelParams& params, const PreparedData& data,
                 const TrainConfig& config, std::span<const std::size_t> indices,
                 bool training, Rng* dropout_rng, GradientMap* grads_out) {
  Tape tape;
  auto vars = tape.params(params);
  Var pred{};
  Tensor targets;
  if (kind == ModelKind::kCnnLstm) {
    VideoBatch batch = assemble_video_batch(data, indices);
    Var frames = tape.input(std::move(batch.frames));
    pred = cnn_lstm_graph(tape, vars, cnn_config_for(data, config), frames, batch.row_of,
                          batch.batch, training, dropout_rng);
    targets = std::move(batch.targets);
  } else {
    SequenceBatch batch = assemble_sequence_batch(data, indices);
    Var xs = tape.input(std::move(batch.sequences));
    pred = lstm_baseline_graph(tape, vars, lstm_config_for(data, config), xs, training,
                               dropout_rng);
    targets = std::move(batch.targets);
  }
  Var flat = tape.reshape(pred, {targets.size()});
  Var loss = mse_op(tape, flat, targets);
  const double loss_value = tape.value(loss).item();
  if (grads_out) *grads_out = tape.backward(loss);
  return loss_value;
}

double mean_loss_over_range(ModelKind kind, const ModelParams& params,
                            const PreparedData& data, const TrainConfig& config,
                            std::size_t first, std::size_t last) {
  // Chunked so the saved LSTM activations stay small.
  const std::size_t chunk = 256;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> indices;
  for (std::size_t lo = first; lo < last; lo += chunk) {
    const std::size_t hi = std::min(last, lo + chunk);
    indices.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) indices[i - lo] = i;
    const double loss = run_batch(kind, params, data, config, indices, false, nullptr, nullptr);
    total += loss * static_cast<double>(hi - lo);
    count += hi - lo;
  }
  return total / static_cast<double>(count);
}

}  // namespace

TrainResult train(ModelKind kind, const PreparedData& data, const TrainConfig& config) {
  if (config.epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (config.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (data.kind != kind) throw ShapeError("train: dataset prepared for a different model");

  Rng init_rng = derive_rng(config.seed, /*tag=*/20);
  ModelParams params;
  if (kind == ModelKind::kCnnLstm) {
    params = build_cnn_lstm(cnn_config_for(data, config), init_rng);
  } else {
    params = build_lstm_baseline(lstm_config_for(data, config), init_rng);
  }

  AdamState adam = make_adam_state(params, config.learning_rate, config.adam_beta1,
                                   config.adam_beta2, config.adam_epsilon);
  Rng dropout_rng = derive_rng(config.seed, /*tag=*/21);

  std::vector<std::size_t> order(data.split.n_train());
  TrainResult result;
  result.history.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = derive_rng(config.seed, /*tag=*/22, epoch);
    shuffle(order, shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      std::span<const std::size_t> indices(order.data() + lo, hi - lo);
      GradientMap grads;
      const double loss =
          run_batch(kind, params, data, config, indices, true, &dropout_rng, &grads);
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(lo / config.batch_size + 1));
      }
      clip_grad_norm(grads, config.clip_max_norm);
      adam_step(params, grads, adam);
      epoch_loss += loss * static_cast<double>(hi - lo);
      seen += hi - lo;
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_loss = epoch_loss / static_cast<double>(seen);
    record.val_loss = mean_loss_over_range(kind, params, data, config, data.split.train_end,
                                           data.split.val_end);
    if (!std::isfinite(record.val_loss)) {
      throw NumericError("train: non-finite validation loss at epoch " +
                         std::to_string(epoch + 1));
    }
    result.history.push_back(record);
  }

  result.params = std::move(params);
  return result;
}

std::vector<double> predict_range(const ModelParams& params, const PreparedData& data,
                                  const TrainConfig& config, std::size_t first_sample,
                                  std::size_t last_sample) {
  if (last_sample > data.n_samples || first_sample >= last_sample) {
    throw ShapeError("predict_range: invalid sample range");
  }
  std::vector<double> out;
  out.reserve(last_sample - first_sample);
  const std::size_t chunk = 256;
  std::vector<std::size_t> indices;
  for (std::size_t lo = first_sample; lo < last_sample; lo += chunk) {
    const std::size_t hi = std::min(last_sample, lo + chunk);
    indices.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) indices[i - lo] = i;

    Tape tape;
    auto vars = tape.params(params);
    Var pred{};
    if (data.kind == ModelKind::kCnnLstm) {
      VideoBatch batch = assemble_video_batch(data, indices);
      Var frames = tape.input(std::move(batch.frames));
      pred = cnn_lstm_graph(tape, vars, cnn_config_for(data, config), frames, batch.row_of,
                            batch.batch, false, nullptr);
    } else {
      SequenceBatch batch = assemble_sequence_batch(data, indices);
      Var xs = tape.input(std::move(batch.sequences));
      pred = lstm_baseline_graph(tape, vars, lstm_config_for(data, config), xs, false, nullptr);
    }
    const Tensor& values = tape.value(pred);
    for (std::size_t i = 0; i < values.size(); ++i) out.push_back(values[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss builders for gradient checking

LossFn make_cnn_lstm_loss(CnnLstmConfig config, Tensor video, double target, bool training,
                          std::uint64_t dropout_seed) {
  return [config, video = std::move(video), target, training,
          dropout_seed](Tape& tape, const NamedTensorList& params) {
    auto vars = tape.params(params);
    Var frames = tape.input(video);
    std::vector<std::int32_t> row_of(config.lookback);
    for (std::size_t t = 0; t < config.lookback; ++t) {
      row_of[t] = static_cast<std::int32_t>(t);
    }
    Rng dropout_rng = derive_rng(dropout_seed, /*tag=*/23);
    Var pred = cnn_lstm_graph(tape, vars, config, frames, row_of, 1, training,
                              training ? &dropout_rng : nullptr);
    Var flat = tape.reshape(pred, {1});
    return mse_op(tape, flat, Tensor::scalar(target));
  };
}

LossFn make_lstm_baseline_loss(LstmBaselineConfig config, Tensor sequence, double target,
                               bool training, std::uint64_t dropout_seed) {
  return [config, sequence = std::move(sequence), target, training,
          dropout_seed](Tape& tape, const NamedTensorList& params) {
    auto vars = tape.params(params);
    Var xs = tape.input(sequence);
    Rng dropout_rng = derive_rng(dropout_seed, /*tag=*/24);
    Var pred = lstm_baseline_graph(tape, vars, config, xs, training,
                                   training ? &dropout_rng : nullptr);
    Var flat = tape.reshape(pred, {1});
    return mse_op(tape, flat, Tensor::scalar(target));
  };
}

}  // namespace flowcast
