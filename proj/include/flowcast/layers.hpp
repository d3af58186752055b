#pragma once

#include <cstdint>
#include <vector>

#include "flowcast/autodiff.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/tensor.hpp"

namespace flowcast {

/// Output extent of a convolution/pooling window sweep.
/// floor((in + 2*pad - kernel) / stride) + 1
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t pad);

struct Conv2DGeom {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// 2-D convolution. x is (C,H,W) or (N,C,H,W); w is (F,C,kh,kw); b is (F).
/// Each output cell is the dot product of a filter with the zero-padded input
/// patch under it, plus the filter bias.
Var conv2d(Tape& tape, Var x, Var w, Var b, const Conv2DGeom& geom = {});

/// Max pooling over (window_h, window_w) patches. Ties route the gradient to
/// the first maximal cell in row-major order.
Var maxpool2d(Tape& tape, Var x, std::size_t window_h, std::size_t window_w,
              std::size_t stride);

/// Affine map x*W^T + b. x is (D) or (N,D); w is (O,D); b is (O).
Var dense(Tape& tape, Var x, Var w, Var b);

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); in evaluation mode the
/// input is returned untouched.
Var dropout(Tape& tape, Var x, double rate, bool training, Rng& rng);

/// Uniform init on [-limit, limit] with limit = sqrt(6 / fan_in).
Tensor he_uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

/// Handles to the twelve LSTM gate parameters on a tape.
/// W_* are (hidden x input_dim), U_* are (hidden x hidden), b_* are (hidden).
struct LstmGateVars {
  Var w_f, w_i, w_o, w_g;
  Var u_f, u_i, u_o, u_g;
  Var b_f, b_i, b_o, b_g;
};

struct LstmStateVars {
  Var h;
  Var c;
};

/// One LSTM step built from tape primitives:
///   f = sig(W_f x + U_f h + b_f), i = sig(...), o = sig(...),
///   g = tanh(W_g x + U_g h + b_g), c' = f.c + i.g, h' = o.tanh(c').
/// x is (D); prev.h and prev.c are (H). Used directly in tests and as the
/// reference for the fused sequence kernel below.
LstmStateVars lstm_cell_step(Tape& tape, Var x, LstmStateVars prev, const LstmGateVars& p);

/// Fused LSTM over a full sequence, from a zero initial state, returning the
/// final hidden state. xs is (L,D) -> result (H), or (B,L,D) -> result (B,H).
Var lstm_sequence(Tape& tape, Var xs, const LstmGateVars& p);

/// Fused LSTM where step inputs are rows of a shared feature matrix:
/// step t of batch element s reads feats row row_of[s*steps + t]. Projections
/// through the input weights are computed once per distinct row, which is
/// what makes lookback windows with shared frames affordable.
Var lstm_over_rows(Tape& tape, Var feats, const std::vector<std::int32_t>& row_of,
                   std::size_t batch, std::size_t steps, const LstmGateVars& p);

/// Fused frame encoder for the fixed conv stack
///   conv(w1) -> relu -> conv(w2) -> relu -> pool 1x1 -> conv(w3) -> relu ->
///   pool 1x1 -> flatten,
/// equivalent to composing conv2d/relu/maxpool2d/reshape (the 1x1 stride-1
/// pools are identities) but processed image-by-image so every intermediate
/// stays cache-resident. All convolutions are stride 1 with same padding.
/// frames is (N,C,H,W); the result is (N, F3*H*W).
Var conv_stack_encoder(Tape& tape, Var frames, Var w1, Var b1, Var w2, Var b2, Var w3,
                       Var b3);

}  // namespace flowcast
