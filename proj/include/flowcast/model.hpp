#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowcast/autodiff.hpp"
#include "flowcast/layers.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/tensor.hpp"

namespace flowcast {

enum class ModelKind { kLstmBaseline, kCnnLstm };

ModelKind model_kind_from_string(const std::string& name);
const char* model_kind_name(ModelKind kind);

/// CNN-LSTM layer stack (fixed):
///   conv 32 @ 1x1 -> relu -> conv 16 @ 3x3 (same) -> relu -> maxpool 1x1 ->
///   conv 32 @ 1x1 -> relu -> maxpool 1x1 -> flatten -> dropout ->
///   lstm(hidden) -> dense(1)
/// All convolutions use stride 1 and same padding; the 1x1 pools use stride 1
/// and therefore preserve spatial extent.
struct CnnLstmConfig {
  std::size_t lookback = 182;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t lstm_hidden = 80;
  double dropout_rate = 0.3;

  std::size_t feature_len() const { return 32 * height * width; }
};

struct LstmBaselineConfig {
  std::size_t lookback = 182;
  std::size_t features = 3;
  std::size_t lstm_hidden = 80;
  double dropout_rate = 0.3;
};

using ModelParams = NamedTensorList;

/// Weight tensors get he_uniform init (fan_in = in_channels*kh*kw for convs,
/// input dim for LSTM/dense inputs, hidden size for recurrent weights);
/// biases start at zero. Requires height, width >= 3 so the 3x3 conv fits.
ModelParams build_cnn_lstm(const CnnLstmConfig& config, Rng& rng);
ModelParams build_lstm_baseline(const LstmBaselineConfig& config, Rng& rng);

std::size_t count_parameters(const ModelParams& params);

struct ForwardProbe {
  std::size_t frame_vectors = 0;
  std::size_t feature_len = 0;
};

/// Graph builders shared by training, evaluation and the gradient checker.
/// `frames` is a (R,C,H,W) stack of distinct frames; step t of batch element
/// s reads frame row_of[s*lookback + t]. Dropout masks are drawn per frame
/// row when `training` is set.
Var cnn_lstm_graph(Tape& tape, const std::unordered_map<std::string, Var>& p,
                   const CnnLstmConfig& config, Var frames,
                   const std::vector<std::int32_t>& row_of, std::size_t batch, bool training,
                   Rng* dropout_rng, ForwardProbe* probe = nullptr);

/// `sequences` is (B,L,F) (or (L,F) for a single sample).
Var lstm_baseline_graph(Tape& tape, const std::unordered_map<std::string, Var>& p,
                        const LstmBaselineConfig& config, Var sequences, bool training,
                        Rng* dropout_rng);

/// Evaluation-mode single-sample forward: video is (L,C,H,W), values already
/// standardized; returns the scaled discharge prediction.
double forward_cnn_lstm(const ModelParams& params, const CnnLstmConfig& config,
                        const Tensor& video, ForwardProbe* probe = nullptr);

/// Evaluation-mode single-sample forward over an (L,F) sequence.
double forward_lstm_baseline(const ModelParams& params, const LstmBaselineConfig& config,
                             const Tensor& sequence);

/// Gate-parameter handles for a registered parameter map with prefix "lstm.".
LstmGateVars lstm_gate_vars(const std::unordered_map<std::string, Var>& p);

}  // namespace flowcast
