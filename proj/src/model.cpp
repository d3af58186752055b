#include "flowcast/model.hpp"

#include "flowcast/errors.hpp"

namespace flowcast {

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "lstm") return ModelKind::kLstmBaseline;
  if (name == "cnn-lstm") return ModelKind::kCnnLstm;
  throw ConfigError("unknown model kind '" + name + "' (expected lstm or cnn-lstm)");
}

const char* model_kind_name(ModelKind kind) {
  return kind == ModelKind::kLstmBaseline ? "lstm" : "cnn-lstm";
}

namespace {

void add_lstm_params(ModelParams& params, std::size_t input_dim, std::size_t hidden,
                     Rng& rng) {
  const char* gates[] = {"f", "i", "o", "g"};
  for (const char* gate : gates) {
    params.add("lstm.W_" + std::string(gate),
               he_uniform_init({hidden, input_dim}, input_dim, rng));
  }
  for (const char* gate : gates) {
    params.add("lstm.U_" + std::string(gate), he_uniform_init({hidden, hidden}, hidden, rng));
  }
  for (const char* gate : gates) {
    params.add("lstm.b_" + std::string(gate), Tensor::zeros({hidden}));
  }
}

void add_dense_params(ModelParams& params, std::size_t input_dim, Rng& rng) {
  params.add("dense.weight", he_uniform_init({1, input_dim}, input_dim, rng));
  params.add("dense.bias", Tensor::zeros({1}));
}

}  // namespace

ModelParams build_cnn_lstm(const CnnLstmConfig& config, Rng& rng) {
  if (config.height < 3 || config.width < 3) {
    throw ConfigError("cnn-lstm: grid " + std::to_string(config.height) + "x" +
                      std::to_string(config.width) + " is too small (need at least 3x3)");
  }
  if (config.lookback == 0) throw ConfigError("cnn-lstm: lookback must be >= 1");
  if (config.lstm_hidden == 0) throw ConfigError("cnn-lstm: lstm_hidden must be >= 1");

  ModelParams params;
  params.add("conv1.weight",
             he_uniform_init({32, config.channels, 1, 1}, config.channels, rng));
  params.add("conv1.bias", Tensor::zeros({32}));
  params.add("conv2.weight", he_uniform_init({16, 32, 3, 3}, 32 * 9, rng));
  params.add("conv2.bias", Tensor::zeros({16}));
  params.add("conv3.weight", he_uniform_init({32, 16, 1, 1}, 16, rng));
  params.add("conv3.bias", Tensor::zeros({32}));
  add_lstm_params(params, config.feature_len(), config.lstm_hidden, rng);
  add_dense_params(params, config.lstm_hidden, rng);
  return params;
}

ModelParams build_lstm_baseline(const LstmBaselineConfig& config, Rng& rng) {
  if (config.lookback == 0) throw ConfigError("lstm: lookback must be >= 1");
  if (config.features == 0) throw ConfigError("lstm: features must be >= 1");
  if (config.lstm_hidden == 0) throw ConfigError("lstm: lstm_hidden must be >= 1");

  ModelParams params;
  add_lstm_params(params, config.features, config.lstm_hidden, rng);
  add_dense_params(params, config.lstm_hidden, rng);
  return params;
}

std::size_t count_parameters(const ModelParams& params) { return params.total_values(); }

LstmGateVars lstm_gate_vars(const std::unordered_map<std::string, Var>& p) {
  return LstmGateVars{p.at("lstm.W_f"), p.at("lstm.W_i"), p.at("lstm.W_o"), p.at("lstm.W_g"),
                      p.at("lstm.U_f"), p.at("lstm.U_i"), p.at("lstm.U_o"), p.at("lstm.U_g"),
                      p.at("lstm.b_f"), p.at("lstm.b_i"), p.at("lstm.b_o"), p.at("lstm.b_g")};
}

Var cnn_lstm_graph(Tape& tape, const std::unordered_map<std::string, Var>& p,
                   const CnnLstmConfig& config, Var frames,
                   const std::vector<std::int32_t>& row_of, std::size_t batch, bool training,
                   Rng* dropout_rng, ForwardProbe* probe) {
  const Tensor& tf = tape.value(frames);
  if (tf.rank() != 4 || tf.extent(1) != config.channels || tf.extent(2) != config.height ||
      tf.extent(3) != config.width) {
    throw ShapeError("cnn-lstm: frame stack " + shape_to_string(tf.shape()) +
                     " does not match configured (C,H,W) = (" +
                     std::to_string(config.channels) + "," + std::to_string(config.height) +
                     "," + std::to_string(config.width) + ")");
  }
  // conv(32,1x1) -> relu -> conv(16,3x3 same) -> relu -> pool 1x1 ->
  // conv(32,1x1) -> relu -> pool 1x1 -> flatten, fused so each frame stays
  // cache-resident. The 1x1 stride-1 pools are identities.
  Var feats = conv_stack_encoder(tape, frames, p.at("conv1.weight"), p.at("conv1.bias"),
                                 p.at("conv2.weight"), p.at("conv2.bias"),
                                 p.at("conv3.weight"), p.at("conv3.bias"));
  if (probe) {
    probe->frame_vectors = row_of.size() / (batch == 0 ? 1 : batch);
    probe->feature_len = config.feature_len();
  }
  if (training) {
    if (!dropout_rng) throw ShapeError("cnn-lstm: training forward needs a dropout rng");
    feats = dropout(tape, feats, config.dropout_rate, true, *dropout_rng);
  }

  Var h = lstm_over_rows(tape, feats, row_of, batch, config.lookback, lstm_gate_vars(p));
  return dense(tape, h, p.at("dense.weight"), p.at("dense.bias"));  // (B,1)
}

Var lstm_baseline_graph(Tape& tape, const std::unordered_map<std::string, Var>& p,
                        const LstmBaselineConfig& config, Var sequences, bool training,
                        Rng* dropout_rng) {
  const Tensor& ts = tape.value(sequences);
  const std::size_t steps = ts.rank() == 3 ? ts.extent(1) : ts.extent(0);
  const std::size_t feat = ts.rank() == 3 ? ts.extent(2) : ts.extent(1);
  if (steps != config.lookback || feat != config.features) {
    throw ShapeError("lstm: sequence " + shape_to_string(ts.shape()) +
                     " does not match configured (L,F) = (" + std::to_string(config.lookback) +
                     "," + std::to_string(config.features) + ")");
  }
  Var h = lstm_sequence(tape, sequences, lstm_gate_vars(p));
  if (training) {
    if (!dropout_rng) throw ShapeError("lstm: training forward needs a dropout rng");
    h = dropout(tape, h, config.dropout_rate, true, *dropout_rng);
  }
  return dense(tape, h, p.at("dense.weight"), p.at("dense.bias"));
}

double forward_cnn_lstm(const ModelParams& params, const CnnLstmConfig& config,
                        const Tensor& video, ForwardProbe* probe) {
  if (video.rank() != 4 || video.extent(0) != config.lookback) {
    throw ShapeError("cnn-lstm: video must be (L,C,H,W) with L = " +
                     std::to_string(config.lookback) + ", got " +
                     shape_to_string(video.shape()));
  }
  Tape tape;
  auto vars = tape.params(params);
  Var frames = tape.input(video);
  std::vector<std::int32_t> row_of(config.lookback);
  for (std::size_t t = 0; t < config.lookback; ++t) row_of[t] = static_cast<std::int32_t>(t);
  Var out = cnn_lstm_graph(tape, vars, config, frames, row_of, 1, false, nullptr, probe);
  return tape.value(out)[0];
}

double forward_lstm_baseline(const ModelParams& params, const LstmBaselineConfig& config,
                             const Tensor& sequence) {
  if (sequence.rank() != 2) {
    throw ShapeError("lstm: sequence must be (L,F), got " + shape_to_string(sequence.shape()));
  }
  Tape tape;
  auto vars = tape.params(params);
  Var xs = tape.input(sequence);
  Var out = lstm_baseline_graph(tape, vars, config, xs, false, nullptr);
  return tape.value(out)[0];
}

}  // namespace flowcast
