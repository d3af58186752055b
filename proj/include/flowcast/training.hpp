#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowcast/autodiff.hpp"
#include "flowcast/data.hpp"
#include "flowcast/model.hpp"
#include "flowcast/tensor.hpp"

namespace flowcast {

// ---------------------------------------------------------------------------
// Chronological split over sample indices. Sizes use floor arithmetic with the
// remainder assigned to the test partition:
//   n_train_total = floor(n * train_frac)
//   n_val         = floor(n_train_total * val_frac)
//   train = [0, n_train_total - n_val), val = [.., n_train_total), test = [.., n)
struct SplitIndices {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t test_end = 0;

  std::size_t n_train() const { return train_end; }
  std::size_t n_val() const { return val_end - train_end; }
  std::size_t n_test() const { return test_end - val_end; }
};

SplitIndices chronological_split(std::size_t n_samples, double train_frac = 0.7,
                                 double val_frac = 0.3);

// ---------------------------------------------------------------------------
// Standard scaler with the population (divide-by-N) convention, fitted
// exclusively on training-period values.
struct Scaler {
  double mean = 0.0;
  double std = 1.0;
};

Scaler fit_scaler(std::span<const double> values);

inline double scale(double x, const Scaler& s) { return (x - s.mean) / s.std; }
inline double inverse_scale(double z, const Scaler& s) { return z * s.std + s.mean; }

double mse_loss(std::span<const double> predictions, std::span<const double> targets);

/// Tape node for the training loss: mean((pred - target)^2).
Var mse_op(Tape& tape, Var predictions, const Tensor& targets);

// ---------------------------------------------------------------------------
// Optimizer

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm; returns the pre-clip norm.
double clip_grad_norm(GradientMap& grads, double max_norm);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  NamedTensorList m;
  NamedTensorList v;
};

AdamState make_adam_state(const ModelParams& params, double learning_rate, double beta1 = 0.9,
                          double beta2 = 0.999, double epsilon = 1e-8);

void adam_step(ModelParams& params, const GradientMap& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Dataset preparation and the training loop

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 50;
  double train_fraction = 0.7;
  double val_fraction = 0.3;
  double clip_max_norm = 1.0;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t lookback = 182;
  std::size_t lstm_hidden = 80;
  double dropout = 0.3;
};

/// Split, standardized and indexed data, ready for mini-batching. Scalers are
/// fitted on days [0, lookback + n_train_samples) only - the days touched by
/// training windows and their targets.
struct PreparedData {
  ModelKind kind = ModelKind::kLstmBaseline;
  std::size_t lookback = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t total_days = 0;
  std::size_t n_samples = 0;
  SplitIndices split;

  Scaler precip_scaler, temp_scaler, flow_scaler;

  // cnn-lstm path: standardized grids and flow series
  Tensor precip_std, temp_std;    // (T,H,W)
  // lstm path: standardized basin means
  std::vector<double> pmean_std, tmean_std;
  // both paths
  std::vector<double> flow_std;     // (T)
  std::vector<double> targets_std;  // per sample
  std::vector<double> targets_raw;  // physical units
};

PreparedData prepare_dataset(ModelKind kind, const GridSeries& precip, const GridSeries& temp,
                             const GaugeSeries& gauge, const TrainConfig& config);

/// Same preparation but with already-fitted scalers (checkpoint evaluation).
PreparedData prepare_dataset_with_scalers(ModelKind kind, const GridSeries& precip,
                                          const GridSeries& temp, const GaugeSeries& gauge,
                                          const TrainConfig& config, const Scaler& precip_s,
                                          const Scaler& temp_s, const Scaler& flow_s);

/// Distinct-frame batch for the CNN-LSTM: `frames` stacks each day needed by
/// the batch once; row_of maps (sample, step) to a frame row.
struct VideoBatch {
  Tensor frames;  // (R,3,H,W)
  std::vector<std::int32_t> row_of;
  Tensor targets;  // (B)
  std::size_t batch = 0;
};

VideoBatch assemble_video_batch(const PreparedData& data,
                                std::span<const std::size_t> sample_indices);

struct SequenceBatch {
  Tensor sequences;  // (B,L,3)
  Tensor targets;    // (B)
  std::size_t batch = 0;
};

SequenceBatch assemble_sequence_batch(const PreparedData& data,
                                      std::span<const std::size_t> sample_indices);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
};

/// The training regimen: he_uniform init from the config seed, exactly
/// `epochs` passes over per-epoch-shuffled training batches, Adam with global
/// gradient-norm clipping, dropout active in training and disabled for the
/// per-epoch validation pass. Aborts with NumericError on a non-finite loss.
TrainResult train(ModelKind kind, const PreparedData& data, const TrainConfig& config);

/// Standardized-space predictions for a contiguous sample range, evaluated in
/// chunks with dropout disabled.
std::vector<double> predict_range(const ModelParams& params, const PreparedData& data,
                                  const TrainConfig& config, std::size_t first_sample,
                                  std::size_t last_sample);

/// Loss builders used by the gradient checker. Dropout masks, when enabled,
/// are frozen by reseeding the same stream on every evaluation.
LossFn make_cnn_lstm_loss(CnnLstmConfig config, Tensor video, double target, bool training,
                          std::uint64_t dropout_seed);
LossFn make_lstm_baseline_loss(LstmBaselineConfig config, Tensor sequence, double target,
                               bool training, std::uint64_t dropout_seed);

}  // namespace flowcast
