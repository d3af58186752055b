#include "flowcast/layers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>

#include "flowcast/blas.hpp"
#include "flowcast/errors.hpp"

namespace flowcast {

namespace {
// Phase timing for the hot kernels, enabled by FLOWCAST_PROFILE.
struct PhaseTimer {
  const char* label;
  std::chrono::steady_clock::time_point start;
  static bool enabled() {
    static const bool on = std::getenv("FLOWCAST_PROFILE") != nullptr;
    return on;
  }
  explicit PhaseTimer(const char* label_) : label(label_) {
    if (enabled()) start = std::chrono::steady_clock::now();
  }
  ~PhaseTimer() {
    if (enabled()) {
      auto ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - start)
                    .count();
      std::fprintf(stderr, "  phase %-18s %7.2f ms\n", label, ms);
    }
  }
};
}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t pad) {
  std::size_t padded = in + 2 * pad;
  if (kernel > padded) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

// im2col for a contiguous run of images. x is (N,C,H,W); columns enumerate
// (image, oy, ox) image-major; rows enumerate (c, ky, kx). Out-of-range taps
// read zero (zero padding).
void im2col(const double* x, std::size_t first, std::size_t count, std::size_t channels,
            std::size_t height, std::size_t width, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            double* col) {
  const std::size_t cols = count * oh * ow;
  const std::size_t img = channels * height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = col + ((c * kh + ky) * kw + kx) * cols;
        std::size_t q = 0;
        for (std::size_t n = 0; n < count; ++n) {
          const double* src = x + (first + n) * img + c * height * width;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                               static_cast<std::ptrdiff_t>(pad);
            for (std::size_t ox = 0; ox < ow; ++ox, ++q) {
              std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                  static_cast<std::ptrdiff_t>(pad);
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(height) || xx < 0 ||
                  xx >= static_cast<std::ptrdiff_t>(width)) {
                row[q] = 0.0;
              } else {
                row[q] = src[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(xx)];
              }
            }
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-add column gradients back into dx.
void col2im_add(const double* col, std::size_t first, std::size_t count, std::size_t channels,
                std::size_t height, std::size_t width, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
                double* dx) {
  const std::size_t cols = count * oh * ow;
  const std::size_t img = channels * height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const double* row = col + ((c * kh + ky) * kw + kx) * cols;
        std::size_t q = 0;
        for (std::size_t n = 0; n < count; ++n) {
          double* dst = dx + (first + n) * img + c * height * width;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                               static_cast<std::ptrdiff_t>(pad);
            for (std::size_t ox = 0; ox < ow; ++ox, ++q) {
              std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                  static_cast<std::ptrdiff_t>(pad);
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(height) || xx < 0 ||
                  xx >= static_cast<std::ptrdiff_t>(width)) {
                continue;
              }
              dst[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(xx)] += row[q];
            }
          }
        }
      }
    }
  }
}

std::size_t conv_chunk_images(std::size_t ckk, std::size_t ohw, std::size_t n) {
  const std::size_t budget = 8u << 20;  // col buffer target, bytes
  std::size_t per_image = ckk * ohw * sizeof(double);
  std::size_t chunk = per_image ? std::max<std::size_t>(1, budget / per_image) : n;
  return std::min(chunk, n);
}

}  // namespace

Var conv2d(Tape& tape, Var x, Var w, Var b, const Conv2DGeom& geom) {
  const Tensor& tx = tape.value(x);
  const Tensor& tw = tape.value(w);
  const Tensor& tb = tape.value(b);

  bool batched = tx.rank() == 4;
  if (!batched && tx.rank() != 3) {
    throw ShapeError("conv2d: input must be (C,H,W) or (N,C,H,W), got " +
                     shape_to_string(tx.shape()));
  }
  if (tw.rank() != 4) {
    throw ShapeError("conv2d: weights must be (F,C,kh,kw), got " + shape_to_string(tw.shape()));
  }
  const std::size_t n = batched ? tx.extent(0) : 1;
  const std::size_t channels = batched ? tx.extent(1) : tx.extent(0);
  const std::size_t height = batched ? tx.extent(2) : tx.extent(1);
  const std::size_t width = batched ? tx.extent(3) : tx.extent(2);
  const std::size_t filters = tw.extent(0);
  const std::size_t kh = tw.extent(2), kw = tw.extent(3);

  if (tw.extent(1) != channels) {
    throw ShapeError("conv2d: shape mismatch " + shape_to_string(tx.shape()) + " vs " +
                     shape_to_string(tw.shape()));
  }
  if (tb.rank() != 1 || tb.extent(0) != filters) {
    throw ShapeError("conv2d: bias must be (" + std::to_string(filters) + "), got " +
                     shape_to_string(tb.shape()));
  }
  if (geom.stride == 0) throw ShapeError("conv2d: stride must be >= 1");

  const std::size_t oh = conv_output_extent(height, kh, geom.stride, geom.pad);
  const std::size_t ow = conv_output_extent(width, kw, geom.stride, geom.pad);
  const std::size_t ohw = oh * ow;
  const std::size_t ckk = channels * kh * kw;

  Tensor out(batched ? Shape{n, filters, oh, ow} : Shape{filters, oh, ow});
  const std::size_t chunk = conv_chunk_images(ckk, ohw, n);
  std::vector<double> col(ckk * chunk * ohw);
  std::vector<double> y(filters * chunk * ohw);

  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    im2col(tx.data(), first, count, channels, height, width, kh, kw, geom.stride, geom.pad, oh,
           ow, col.data());
    // (F x CKK) * (CKK x count*OHW)
    dgemm(false, false, filters, count * ohw, ckk, 1.0, tw.data(), ckk, col.data(), count * ohw,
          0.0, y.data(), count * ohw);
    for (std::size_t nl = 0; nl < count; ++nl) {
      for (std::size_t f = 0; f < filters; ++f) {
        const double* src = y.data() + f * count * ohw + nl * ohw;
        double* dst = out.data() + ((first + nl) * filters + f) * ohw;
        const double bias = tb[f];
        for (std::size_t i = 0; i < ohw; ++i) dst[i] = src[i] + bias;
      }
    }
  }

  auto backward = [x, w, b, n, channels, height, width, filters, kh, kw, geom, oh, ow, ohw,
                   ckk](BackwardCtx& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& vx = ctx.value(x);
    const Tensor& vw = ctx.value(w);

    if (ctx.needs(b)) {
      Tensor& gb = ctx.slot(b);
      for (std::size_t img = 0; img < n; ++img)
        for (std::size_t f = 0; f < filters; ++f) {
          const double* src = g.data() + (img * filters + f) * ohw;
          double s = 0.0;
          for (std::size_t i = 0; i < ohw; ++i) s += src[i];
          gb[f] += s;
        }
    }

    const bool need_x = ctx.needs(x);
    const bool need_w = ctx.needs(w);
    if (!need_x && !need_w) return;

    const std::size_t chunk = conv_chunk_images(ckk, ohw, n);
    std::vector<double> col(ckk * chunk * ohw);
    std::vector<double> dy(filters * chunk * ohw);
    std::vector<double> dcol(need_x ? ckk * chunk * ohw : 0);

    for (std::size_t first = 0; first < n; first += chunk) {
      const std::size_t count = std::min(chunk, n - first);
      for (std::size_t nl = 0; nl < count; ++nl)
        for (std::size_t f = 0; f < filters; ++f) {
          const double* src = g.data() + ((first + nl) * filters + f) * ohw;
          double* dst = dy.data() + f * count * ohw + nl * ohw;
          for (std::size_t i = 0; i < ohw; ++i) dst[i] = src[i];
        }
      if (need_w) {
        im2col(vx.data(), first, count, channels, height, width, kh, kw, geom.stride, geom.pad,
               oh, ow, col.data());
        // dW += dY * col^T
        dgemm(false, true, filters, ckk, count * ohw, 1.0, dy.data(), count * ohw, col.data(),
              count * ohw, 1.0, ctx.slot(w).data(), ckk);
      }
      if (need_x) {
        // dcol = W^T * dY, then scatter back
        dgemm(true, false, ckk, count * ohw, filters, 1.0, vw.data(), ckk, dy.data(),
              count * ohw, 0.0, dcol.data(), count * ohw);
        col2im_add(dcol.data(), first, count, channels, height, width, kh, kw, geom.stride,
                   geom.pad, oh, ow, ctx.slot(x).data());
      }
    }
  };

  return tape.emit("conv2d", std::move(out), {x, w, b}, std::move(backward));
}

Var maxpool2d(Tape& tape, Var x, std::size_t window_h, std::size_t window_w,
              std::size_t stride) {
  const Tensor& tx = tape.value(x);
  bool batched = tx.rank() == 4;
  if (!batched && tx.rank() != 3) {
    throw ShapeError("maxpool2d: input must be (C,H,W) or (N,C,H,W), got " +
                     shape_to_string(tx.shape()));
  }
  if (window_h == 0 || window_w == 0 || stride == 0) {
    throw ShapeError("maxpool2d: window and stride must be >= 1");
  }
  const std::size_t n = batched ? tx.extent(0) : 1;
  const std::size_t channels = batched ? tx.extent(1) : tx.extent(0);
  const std::size_t height = batched ? tx.extent(2) : tx.extent(1);
  const std::size_t width = batched ? tx.extent(3) : tx.extent(2);
  if (window_h > height || window_w > width) {
    throw ShapeError("maxpool2d: window " + std::to_string(window_h) + "x" +
                     std::to_string(window_w) + " exceeds input extent " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t oh = (height - window_h) / stride + 1;
  const std::size_t ow = (width - window_w) / stride + 1;

  Tensor out(batched ? Shape{n, channels, oh, ow} : Shape{channels, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(n * channels * oh * ow);

  std::size_t q = 0;
  for (std::size_t plane = 0; plane < n * channels; ++plane) {
    const double* src = tx.data() + plane * height * width;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++q) {
        std::size_t best = (oy * stride) * width + ox * stride;
        double best_v = src[best];
        for (std::size_t ky = 0; ky < window_h; ++ky) {
          for (std::size_t kx = 0; kx < window_w; ++kx) {
            std::size_t idx = (oy * stride + ky) * width + (ox * stride + kx);
            if (src[idx] > best_v) {
              best_v = src[idx];
              best = idx;
            }
          }
        }
        out[q] = best_v;
        (*argmax)[q] = static_cast<std::uint32_t>(plane * height * width + best);
      }
    }
  }

  return tape.emit("maxpool2d", std::move(out), {x}, [x, argmax](BackwardCtx& ctx) {
    if (!ctx.needs(x)) return;
    Tensor& gx = ctx.slot(x);
    const Tensor& g = ctx.grad_out();
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

Var dense(Tape& tape, Var x, Var w, Var b) {
  const Tensor& tx = tape.value(x);
  const Tensor& tw = tape.value(w);
  const Tensor& tb = tape.value(b);
  bool batched = tx.rank() == 2;
  if (!batched && tx.rank() != 1) {
    throw ShapeError("dense: input must be (D) or (N,D), got " + shape_to_string(tx.shape()));
  }
  const std::size_t n = batched ? tx.extent(0) : 1;
  const std::size_t d = batched ? tx.extent(1) : tx.extent(0);
  if (tw.rank() != 2 || tw.extent(1) != d) {
    throw ShapeError("dense: shape mismatch " + shape_to_string(tx.shape()) + " vs " +
                     shape_to_string(tw.shape()));
  }
  const std::size_t o = tw.extent(0);
  if (tb.rank() != 1 || tb.extent(0) != o) {
    throw ShapeError("dense: bias must be (" + std::to_string(o) + "), got " +
                     shape_to_string(tb.shape()));
  }

  Tensor out(batched ? Shape{n, o} : Shape{o});
  dgemm(false, true, n, o, d, 1.0, tx.data(), d, tw.data(), d, 0.0, out.data(), o);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < o; ++c) out[r * o + c] += tb[c];

  return tape.emit("dense", std::move(out), {x, w, b}, [x, w, b, n, d, o](BackwardCtx& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(x)) {
      dgemm(false, false, n, d, o, 1.0, g.data(), o, ctx.value(w).data(), d, 1.0,
            ctx.slot(x).data(), d);
    }
    if (ctx.needs(w)) {
      dgemm(true, false, o, d, n, 1.0, g.data(), o, ctx.value(x).data(), d, 1.0,
            ctx.slot(w).data(), d);
    }
    if (ctx.needs(b)) {
      Tensor& gb = ctx.slot(b);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < o; ++c) gb[c] += g[r * o + c];
    }
  });
}

Var dropout(Tape& tape, Var x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ShapeError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;  // evaluation mode is exactly the identity

  const Tensor& tx = tape.value(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(tx.size());
  Tensor out(tx.shape());
  for (std::size_t i = 0; i < tx.size(); ++i) {
    bool keep = uniform01(rng) >= rate;
    (*mask)[i] = keep;
    out[i] = keep ? tx[i] * keep_scale : 0.0;
  }
  return tape.emit("dropout", std::move(out), {x}, [x, mask, keep_scale](BackwardCtx& ctx) {
    if (!ctx.needs(x)) return;
    Tensor& gx = ctx.slot(x);
    const Tensor& g = ctx.grad_out();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if ((*mask)[i]) gx[i] += g[i] * keep_scale;
    }
  });
}

Tensor he_uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ShapeError("he_uniform_init: fan_in must be >= 1");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uniform(rng, -limit, limit);
  return out;
}


namespace {
// Uninitialized scratch buffer; callers guarantee every element is written
// before it is read.
struct Scratch {
  std::unique_ptr<double[]> p;
  explicit Scratch(std::size_t n) : p(new double[n]) {}
  double* data() { return p.get(); }
  const double* data() const { return p.get(); }
};
}  // namespace

// ---------------------------------------------------------------------------
// Fused conv stack
//
// The three convolutions run on a channels-last copy of the frame stack so
// each layer is one large GEMM (the 3x3 layer goes through a chunked im2col).
// Basin grids are tiny, so the GEMM-friendly layout is what keeps the
// time-distributed encoder off the critical path.

namespace {

struct ConvStackLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t k = 0;
};

// (F,C,k,k) weights -> (k*k*C, F) matrix matching the channels-last im2col
// row layout (tap-major, channel-minor).
std::vector<double> repack_weights_hwc(const Tensor& w) {
  const std::size_t f = w.extent(0), c = w.extent(1), k = w.extent(2);
  std::vector<double> out(k * k * c * f);
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t tap = 0; tap < k * k; ++tap)
        out[(tap * c + ci) * f + fi] = w[((fi * c + ci) * k * k) + tap];
  return out;
}

void unpack_weight_grads_hwc(const std::vector<double>& dwc, Tensor& dw) {
  const std::size_t f = dw.extent(0), c = dw.extent(1), k = dw.extent(2);
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t tap = 0; tap < k * k; ++tap)
        dw[((fi * c + ci) * k * k) + tap] += dwc[(tap * c + ci) * f + fi];
}

// Channels-last im2col for a run of images: row (n,y,x) holds the k*k taps of
// the same-padded patch, each tap a contiguous run of `c` channel values.
void im2col_hwc(const double* a, std::size_t first, std::size_t count, std::size_t height,
                std::size_t width, std::size_t c, std::size_t k, double* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t hw = height * width;
  double* dst = col;
  for (std::size_t n = 0; n < count; ++n) {
    const double* img = a + (first + n) * hw * c;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          for (std::size_t kx = 0; kx < k; ++kx, dst += c) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(height) || xx < 0 ||
                xx >= static_cast<std::ptrdiff_t>(width)) {
              for (std::size_t ci = 0; ci < c; ++ci) dst[ci] = 0.0;
            } else {
              const double* src =
                  img + (static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)) * c;
              for (std::size_t ci = 0; ci < c; ++ci) dst[ci] = src[ci];
            }
          }
        }
      }
    }
  }
}

void col2im_hwc_add(const double* col, std::size_t first, std::size_t count,
                    std::size_t height, std::size_t width, std::size_t c, std::size_t k,
                    double* da) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t hw = height * width;
  const double* src = col;
  for (std::size_t n = 0; n < count; ++n) {
    double* img = da + (first + n) * hw * c;
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          for (std::size_t kx = 0; kx < k; ++kx, src += c) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - pad;
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(height) || xx < 0 ||
                xx >= static_cast<std::ptrdiff_t>(width)) {
              continue;
            }
            double* dst =
                img + (static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)) * c;
            for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
          }
        }
      }
    }
  }
}

// relu(x * Wc + bias rows) over `rows` rows, where x is rows x (k*k*c) (via
// im2col when k > 1) and the output is rows x f, channels-last.
struct HwcConvLayer {
  std::vector<double> wc;   // (k*k*in, out)
  const double* bias = nullptr;
  ConvStackLayer dims;
};

struct ConvStackSaved {
  std::unique_ptr<double[]> a0;  // (N*HW, C)  channels-last input
  std::unique_ptr<double[]> a1;  // (N*HW, F1) post-relu
  std::unique_ptr<double[]> a2;  // (N*HW, F2) post-relu
  std::vector<std::uint8_t> m3;  // final relu mask, channels-last (N*HW, F3)
};

void hwc_conv_forward(const double* in, std::size_t n, std::size_t height, std::size_t width,
                      const HwcConvLayer& layer, double* out) {
  const std::size_t hw = height * width;
  const std::size_t rows_total = n * hw;
  const std::size_t ckk = layer.dims.in * layer.dims.k * layer.dims.k;
  const std::size_t f = layer.dims.out;

  if (layer.dims.k == 1) {
    dgemm(false, false, rows_total, f, layer.dims.in, 1.0, in, layer.dims.in,
          layer.wc.data(), f, 0.0, out, f);
  } else {
    const std::size_t chunk = std::max<std::size_t>(1, (1u << 20) / (ckk * hw * 8));
    Scratch col(std::min(chunk, n) * hw * ckk);
    for (std::size_t first = 0; first < n; first += chunk) {
      const std::size_t count = std::min(chunk, n - first);
      im2col_hwc(in, first, count, height, width, layer.dims.in, layer.dims.k, col.data());
      dgemm(false, false, count * hw, f, ckk, 1.0, col.data(), ckk, layer.wc.data(), f, 0.0,
            out + first * hw * f, f);
    }
  }
  for (std::size_t r = 0; r < rows_total; ++r) {
    double* row = out + r * f;
    for (std::size_t j = 0; j < f; ++j) {
      const double v = row[j] + layer.bias[j];
      row[j] = v > 0.0 ? v : 0.0;
    }
  }
}

// dout is the gradient w.r.t. this layer's post-relu output, already masked.
// Accumulates dwc/db and, when din is non-null, the (unmasked) input gradient.
void hwc_conv_backward(const double* in, const double* dout, std::size_t n,
                       std::size_t height, std::size_t width, const HwcConvLayer& layer,
                       std::vector<double>& dwc, double* db, double* din) {
  const std::size_t hw = height * width;
  const std::size_t rows_total = n * hw;
  const std::size_t ckk = layer.dims.in * layer.dims.k * layer.dims.k;
  const std::size_t f = layer.dims.out;

  for (std::size_t r = 0; r < rows_total; ++r) {
    const double* row = dout + r * f;
    for (std::size_t j = 0; j < f; ++j) db[j] += row[j];
  }

  if (layer.dims.k == 1) {
    // dWc += in^T * dout ; din = dout * Wc^T
    dgemm(true, false, layer.dims.in, f, rows_total, 1.0, in, layer.dims.in, dout, f, 1.0,
          dwc.data(), f);
    if (din) {
      dgemm(false, true, rows_total, layer.dims.in, f, 1.0, dout, f, layer.wc.data(), f, 1.0,
            din, layer.dims.in);
    }
    return;
  }

  const std::size_t chunk = std::max<std::size_t>(1, (1u << 20) / (ckk * hw * 8));
  const std::size_t col_len = std::min(chunk, n) * hw * ckk;
  Scratch col(col_len);
  Scratch dcol(din ? col_len : 0);
  for (std::size_t firstn = 0; firstn < n; firstn += chunk) {
    const std::size_t count = std::min(chunk, n - firstn);
    im2col_hwc(in, firstn, count, height, width, layer.dims.in, layer.dims.k, col.data());
    dgemm(true, false, ckk, f, count * hw, 1.0, col.data(), ckk, dout + firstn * hw * f, f,
          1.0, dwc.data(), f);
    if (din) {
      dgemm(false, true, count * hw, ckk, f, 1.0, dout + firstn * hw * f, f, layer.wc.data(),
            f, 0.0, dcol.data(), ckk);
      col2im_hwc_add(dcol.data(), firstn, count, height, width, layer.dims.in, layer.dims.k,
                     din);
    }
  }
}

}  // namespace

Var conv_stack_encoder(Tape& tape, Var frames, Var w1, Var b1, Var w2, Var b2, Var w3,
                       Var b3) {
  const Tensor& tx = tape.value(frames);
  if (tx.rank() != 4) {
    throw ShapeError("conv stack: frames must be (N,C,H,W), got " +
                     shape_to_string(tx.shape()));
  }
  const std::size_t n = tx.extent(0), channels = tx.extent(1);
  const std::size_t height = tx.extent(2), width = tx.extent(3);
  const std::size_t hw = height * width;

  auto layer_of = [&](Var w, Var b, std::size_t expect_in) {
    const Tensor& tw = tape.value(w);
    if (tw.rank() != 4 || tw.extent(1) != expect_in || tw.extent(2) != tw.extent(3) ||
        tw.extent(2) % 2 == 0) {
      throw ShapeError("conv stack: bad weight shape " + shape_to_string(tw.shape()));
    }
    if (tw.extent(2) > height || tw.extent(2) > width) {
      throw ShapeError("conv stack: kernel " + std::to_string(tw.extent(2)) +
                       " exceeds grid " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
    if (tape.value(b).size() != tw.extent(0)) {
      throw ShapeError("conv stack: bias does not match filters");
    }
    return ConvStackLayer{tw.extent(1), tw.extent(0), tw.extent(2)};
  };
  const ConvStackLayer l1 = layer_of(w1, b1, channels);
  const ConvStackLayer l2 = layer_of(w2, b2, l1.out);
  const ConvStackLayer l3 = layer_of(w3, b3, l2.out);

  auto saved = std::make_shared<ConvStackSaved>();
  saved->a0.reset(new double[n * hw * channels]);
  saved->a1.reset(new double[n * hw * l1.out]);
  saved->a2.reset(new double[n * hw * l2.out]);
  saved->m3.resize(n * hw * l3.out);
  Tensor out({n, l3.out * hw});

  {
    PhaseTimer timer("conv.fwd");
    // channels-last copy of the input
    for (std::size_t img = 0; img < n; ++img) {
      const double* src = tx.data() + img * channels * hw;
      double* dst = saved->a0.get() + img * hw * channels;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < hw; ++i) dst[i * channels + c] = src[c * hw + i];
    }

    HwcConvLayer hl1{repack_weights_hwc(tape.value(w1)), tape.value(b1).data(), l1};
    HwcConvLayer hl2{repack_weights_hwc(tape.value(w2)), tape.value(b2).data(), l2};
    HwcConvLayer hl3{repack_weights_hwc(tape.value(w3)), tape.value(b3).data(), l3};

    hwc_conv_forward(saved->a0.get(), n, height, width, hl1, saved->a1.get());
    hwc_conv_forward(saved->a1.get(), n, height, width, hl2, saved->a2.get());

    Scratch a3(n * hw * l3.out);
    hwc_conv_forward(saved->a2.get(), n, height, width, hl3, a3.data());
    for (std::size_t i = 0; i < n * hw * l3.out; ++i) saved->m3[i] = a3.data()[i] > 0.0;

    // back to (F3,H,W) row-major flattening per frame
    for (std::size_t img = 0; img < n; ++img) {
      const double* src = a3.data() + img * hw * l3.out;
      double* dst = out.data() + img * l3.out * hw;
      for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t f = 0; f < l3.out; ++f) dst[f * hw + i] = src[i * l3.out + f];
    }
  }

  auto backward = [frames, w1, b1, w2, b2, w3, b3, saved, n, channels, height, width, hw, l1,
                   l2, l3](BackwardCtx& ctx) {
    PhaseTimer timer("conv.bwd");
    const Tensor& g = ctx.grad_out();  // (N, F3*hw), frame-major CHW flatten

    HwcConvLayer hl1{repack_weights_hwc(ctx.value(w1)), nullptr, l1};
    HwcConvLayer hl2{repack_weights_hwc(ctx.value(w2)), nullptr, l2};
    HwcConvLayer hl3{repack_weights_hwc(ctx.value(w3)), nullptr, l3};

    // masked gradient of the last activation, channels-last
    Scratch d3(n * hw * l3.out);
    for (std::size_t img = 0; img < n; ++img) {
      const double* src = g.data() + img * l3.out * hw;
      const std::uint8_t* mask = saved->m3.data() + img * hw * l3.out;
      double* dst = d3.data() + img * hw * l3.out;
      for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t f = 0; f < l3.out; ++f) {
          const std::size_t at = i * l3.out + f;
          dst[at] = mask[at] ? src[f * hw + i] : 0.0;
        }
    }

    std::vector<double> dwc3(hl3.wc.size(), 0.0);
    std::vector<double> dwc2(hl2.wc.size(), 0.0);
    std::vector<double> dwc1(hl1.wc.size(), 0.0);
    std::vector<double> d2(n * hw * l2.out, 0.0);
    std::vector<double> d1(n * hw * l1.out, 0.0);

    hwc_conv_backward(saved->a2.get(), d3.data(), n, height, width, hl3, dwc3,
                      ctx.slot(b3).data(), d2.data());
    for (std::size_t i = 0; i < d2.size(); ++i) {
      if (saved->a2[i] <= 0.0) d2[i] = 0.0;
    }
    hwc_conv_backward(saved->a1.get(), d2.data(), n, height, width, hl2, dwc2,
                      ctx.slot(b2).data(), d1.data());
    for (std::size_t i = 0; i < d1.size(); ++i) {
      if (saved->a1[i] <= 0.0) d1[i] = 0.0;
    }
    const bool need_frames = ctx.needs(frames);
    std::vector<double> d0(need_frames ? n * hw * channels : 0, 0.0);
    hwc_conv_backward(saved->a0.get(), d1.data(), n, height, width, hl1, dwc1,
                      ctx.slot(b1).data(), need_frames ? d0.data() : nullptr);

    unpack_weight_grads_hwc(dwc1, ctx.slot(w1));
    unpack_weight_grads_hwc(dwc2, ctx.slot(w2));
    unpack_weight_grads_hwc(dwc3, ctx.slot(w3));

    if (need_frames) {
      Tensor& gx = ctx.slot(frames);
      for (std::size_t img = 0; img < n; ++img) {
        const double* src = d0.data() + img * hw * channels;
        double* dst = gx.data() + img * channels * hw;
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t i = 0; i < hw; ++i) dst[c * hw + i] += src[i * channels + c];
      }
    }
  };

  return tape.emit("conv_stack", std::move(out), {frames, w1, b1, w2, b2, w3, b3},
                   std::move(backward));
}

// ---------------------------------------------------------------------------
// LSTM

LstmStateVars lstm_cell_step(Tape& tape, Var x, LstmStateVars prev, const LstmGateVars& p) {
  const std::size_t d = tape.value(x).size();
  const std::size_t h = tape.value(p.b_f).size();

  Var xc = tape.reshape(x, {d, 1});
  Var hc = tape.reshape(prev.h, {h, 1});
  Var cc = tape.reshape(prev.c, {h, 1});

  auto gate = [&](Var wx, Var uh, Var bias, bool is_tanh) {
    Var z = tape.add(tape.add(tape.matmul(wx, xc), tape.matmul(uh, hc)),
                     tape.reshape(bias, {h, 1}));
    return is_tanh ? tape.tanh(z) : tape.sigmoid(z);
  };

  Var f = gate(p.w_f, p.u_f, p.b_f, false);
  Var i = gate(p.w_i, p.u_i, p.b_i, false);
  Var o = gate(p.w_o, p.u_o, p.b_o, false);
  Var g = gate(p.w_g, p.u_g, p.b_g, true);

  Var c_next = tape.add(tape.multiply(f, cc), tape.multiply(i, g));
  Var h_next = tape.multiply(o, tape.tanh(c_next));
  return LstmStateVars{tape.reshape(h_next, {h}), tape.reshape(c_next, {h})};
}

namespace {

// Packed gate layout: rows [f | i | g | o], each block `hidden` rows.
struct LstmDims {
  std::size_t hidden = 0;
  std::size_t input = 0;
};

LstmDims lstm_check_params(Tape& tape, const LstmGateVars& p) {
  const Tensor& wf = tape.value(p.w_f);
  if (wf.rank() != 2) throw ShapeError("lstm: W_f must be 2-D");
  LstmDims dims{wf.extent(0), wf.extent(1)};
  auto check = [&](Var v, std::size_t r, std::size_t c, const char* what) {
    const Tensor& t = tape.value(v);
    if ((c == 0 && (t.rank() != 1 || t.extent(0) != r)) ||
        (c != 0 && (t.rank() != 2 || t.extent(0) != r || t.extent(1) != c))) {
      throw ShapeError(std::string("lstm: ") + what + " has shape " +
                       shape_to_string(t.shape()));
    }
  };
  check(p.w_i, dims.hidden, dims.input, "W_i");
  check(p.w_o, dims.hidden, dims.input, "W_o");
  check(p.w_g, dims.hidden, dims.input, "W_g");
  check(p.u_f, dims.hidden, dims.hidden, "U_f");
  check(p.u_i, dims.hidden, dims.hidden, "U_i");
  check(p.u_o, dims.hidden, dims.hidden, "U_o");
  check(p.u_g, dims.hidden, dims.hidden, "U_g");
  check(p.b_f, dims.hidden, 0, "b_f");
  check(p.b_i, dims.hidden, 0, "b_i");
  check(p.b_o, dims.hidden, 0, "b_o");
  check(p.b_g, dims.hidden, 0, "b_g");
  return dims;
}

void pack_rows(const Tensor& f, const Tensor& i, const Tensor& g, const Tensor& o,
               std::vector<double>& out) {
  out.resize(f.size() + i.size() + g.size() + o.size());
  double* dst = out.data();
  auto copy = [&dst](const Tensor& t) {
    std::copy(t.data(), t.data() + t.size(), dst);
    dst += t.size();
  };
  copy(f);
  copy(i);
  copy(g);
  copy(o);
}

struct LstmSaved {
  std::unique_ptr<double[]> acts;  // (L,B,4H) gate activations [f i g o]
  std::unique_ptr<double[]> c;     // (L,B,H)
  std::unique_ptr<double[]> tau;   // (L,B,H) tanh(c)
  std::unique_ptr<double[]> h;     // (L,B,H)
  std::vector<double> wx;          // (4H,D)
  std::vector<double> wh;          // (4H,H)

  void allocate(std::size_t steps, std::size_t batch, std::size_t hidden) {
    acts.reset(new double[steps * batch * 4 * hidden]);
    c.reset(new double[steps * batch * hidden]);
    tau.reset(new double[steps * batch * hidden]);
    h.reset(new double[steps * batch * hidden]);
  }
};

}  // namespace

Var lstm_over_rows(Tape& tape, Var feats, const std::vector<std::int32_t>& row_of,
                   std::size_t batch, std::size_t steps, const LstmGateVars& p) {
  if (steps == 0) throw ShapeError("lstm: empty sequence");
  const Tensor& src = tape.value(feats);
  if (src.rank() != 2) {
    throw ShapeError("lstm: feature matrix must be 2-D, got " + shape_to_string(src.shape()));
  }
  if (row_of.size() != batch * steps) {
    throw ShapeError("lstm: row map has " + std::to_string(row_of.size()) + " entries, need " +
                     std::to_string(batch * steps));
  }
  const std::size_t rows = src.extent(0);
  for (std::int32_t r : row_of) {
    if (r < 0 || static_cast<std::size_t>(r) >= rows) {
      throw ShapeError("lstm: row index out of range");
    }
  }
  const LstmDims dims = lstm_check_params(tape, p);
  if (dims.input != src.extent(1)) {
    throw ShapeError("lstm: shape mismatch " + shape_to_string(src.shape()) + " vs W " +
                     shape_to_string(tape.value(p.w_f).shape()));
  }
  const std::size_t hidden = dims.hidden, input = dims.input;
  const std::size_t g4 = 4 * hidden;

  auto saved = std::make_shared<LstmSaved>();
  pack_rows(tape.value(p.w_f), tape.value(p.w_i), tape.value(p.w_g), tape.value(p.w_o),
            saved->wx);
  pack_rows(tape.value(p.u_f), tape.value(p.u_i), tape.value(p.u_g), tape.value(p.u_o),
            saved->wh);
  std::vector<double> bias(g4);
  {
    const Tensor& bf = tape.value(p.b_f);
    const Tensor& bi = tape.value(p.b_i);
    const Tensor& bg = tape.value(p.b_g);
    const Tensor& bo = tape.value(p.b_o);
    for (std::size_t j = 0; j < hidden; ++j) {
      bias[j] = bf[j];
      bias[hidden + j] = bi[j];
      bias[2 * hidden + j] = bg[j];
      bias[3 * hidden + j] = bo[j];
    }
  }

  // Input projections, once per distinct feature row: (R,D) * (D,4H)
  Scratch zin(rows * g4);
  {
    PhaseTimer timer("lstm.zin");
    dgemm(false, true, rows, g4, input, 1.0, src.data(), input, saved->wx.data(), input, 0.0,
          zin.data(), g4);
  }

  saved->allocate(steps, batch, hidden);

  BlasThreadGuard single_thread(1);
  PhaseTimer timer("lstm.steps_fwd");
  std::vector<double> z(batch * g4);
  const double* h_prev = nullptr;
  const double* c_prev = nullptr;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t s = 0; s < batch; ++s) {
      const double* zrow = zin.data() + static_cast<std::size_t>(row_of[s * steps + t]) * g4;
      double* dst = z.data() + s * g4;
      for (std::size_t j = 0; j < g4; ++j) dst[j] = zrow[j] + bias[j];
    }
    if (t > 0) {
      dgemm(false, true, batch, g4, hidden, 1.0, h_prev, hidden, saved->wh.data(), hidden, 1.0,
            z.data(), g4);
    }
    double* acts_t = saved->acts.get() + t * batch * g4;
    double* c_t = saved->c.get() + t * batch * hidden;
    double* tau_t = saved->tau.get() + t * batch * hidden;
    double* h_t = saved->h.get() + t * batch * hidden;

    // Gate layout per sample: [f | i | g | o]. Activating block-wise keeps
    // the exp/tanh loops vectorizable.
    for (std::size_t s = 0; s < batch; ++s) {
      const double* zs = z.data() + s * g4;
      double* as = acts_t + s * g4;
      for (std::size_t j = 0; j < 2 * hidden; ++j) {
        as[j] = 1.0 / (1.0 + std::exp(-zs[j]));  // f, i
      }
      for (std::size_t j = 2 * hidden; j < 3 * hidden; ++j) as[j] = std::tanh(zs[j]);  // g
      for (std::size_t j = 3 * hidden; j < g4; ++j) {
        as[j] = 1.0 / (1.0 + std::exp(-zs[j]));  // o
      }
    }
    for (std::size_t s = 0; s < batch; ++s) {
      const double* as = acts_t + s * g4;
      double* cs = c_t + s * hidden;
      const double* cps = t > 0 ? c_prev + s * hidden : nullptr;
      for (std::size_t j = 0; j < hidden; ++j) {
        const double cp = cps ? cps[j] : 0.0;
        cs[j] = as[j] * cp + as[hidden + j] * as[2 * hidden + j];
      }
    }
    for (std::size_t j = 0; j < batch * hidden; ++j) tau_t[j] = std::tanh(c_t[j]);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* as = acts_t + s * g4;
      double* hs = h_t + s * hidden;
      const double* taus = tau_t + s * hidden;
      for (std::size_t j = 0; j < hidden; ++j) hs[j] = as[3 * hidden + j] * taus[j];
    }
    h_prev = h_t;
    c_prev = c_t;
  }

  Tensor out({batch, hidden});
  std::copy(saved->h.get() + (steps - 1) * batch * hidden,
            saved->h.get() + steps * batch * hidden, out.data());

  auto row_map = std::make_shared<std::vector<std::int32_t>>(row_of);
  auto backward = [feats, p, saved, row_map, batch, steps, hidden, input,
                   rows](BackwardCtx& ctx) {
    const std::size_t g4 = 4 * hidden;
    const Tensor& gout = ctx.grad_out();  // (B,H)

    std::vector<double> dh(gout.data(), gout.data() + batch * hidden);
    std::vector<double> dc(batch * hidden, 0.0);
    Scratch dz_all(steps * batch * g4);
    std::vector<double> dwh(g4 * hidden, 0.0);

    {
      BlasThreadGuard single_thread(1);
      PhaseTimer timer("lstm.steps_bwd");
      for (std::size_t t = steps; t-- > 0;) {
        const double* acts_t = saved->acts.get() + t * batch * g4;
        const double* c_prev = t > 0 ? saved->c.get() + (t - 1) * batch * hidden : nullptr;
        const double* tau_t = saved->tau.get() + t * batch * hidden;
        double* dz_t = dz_all.data() + t * batch * g4;

        for (std::size_t s = 0; s < batch; ++s) {
          const double* as = acts_t + s * g4;
          double* dzs = dz_t + s * g4;
          for (std::size_t j = 0; j < hidden; ++j) {
            const double f = as[j];
            const double i = as[hidden + j];
            const double g = as[2 * hidden + j];
            const double o = as[3 * hidden + j];
            const double tau = tau_t[s * hidden + j];
            const double dh_sj = dh[s * hidden + j];
            const double do_ = dh_sj * tau;
            double dcv = dc[s * hidden + j] + dh_sj * o * (1.0 - tau * tau);
            const double cp = t > 0 ? c_prev[s * hidden + j] : 0.0;
            dzs[j] = dcv * cp * f * (1.0 - f);
            dzs[hidden + j] = dcv * g * i * (1.0 - i);
            dzs[2 * hidden + j] = dcv * i * (1.0 - g * g);
            dzs[3 * hidden + j] = do_ * o * (1.0 - o);
            dc[s * hidden + j] = dcv * f;
          }
        }
        if (t > 0) {
          // dh_{t-1} = dZ_t * Wh
          dgemm(false, false, batch, hidden, g4, 1.0, dz_t, g4, saved->wh.data(), hidden, 0.0,
                dh.data(), hidden);
        }
      }
    }

    if (steps > 1) {
      // dWh = sum_t dZ_t^T h_{t-1}: rows (t,s) of dZ for t >= 1 pair with rows
      // (t-1,s) of the saved hidden states, both contiguous, so the whole
      // accumulation collapses into one GEMM.
      dgemm(true, false, g4, hidden, (steps - 1) * batch, 1.0, dz_all.data() + batch * g4, g4,
            saved->h.get(), hidden, 0.0, dwh.data(), hidden);
    }

    // Scatter step gradients back onto distinct rows, then one GEMM each for
    // the input-weight and feature gradients.
    PhaseTimer timer_tail("lstm.bwd_tail");
    std::vector<double> dzin(rows * g4, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t s = 0; s < batch; ++s) {
        const double* src_row = dz_all.data() + (t * batch + s) * g4;
        double* dst = dzin.data() + static_cast<std::size_t>((*row_map)[s * steps + t]) * g4;
        for (std::size_t j = 0; j < g4; ++j) dst[j] += src_row[j];
      }
    }

    auto add_gate_rows = [&](Var target, const std::vector<double>& packed, std::size_t block,
                             std::size_t cols) {
      if (!ctx.needs(target)) return;
      Tensor& slot = ctx.slot(target);
      const double* srcp = packed.data() + block * hidden * cols;
      for (std::size_t i = 0; i < hidden * cols; ++i) slot[i] += srcp[i];
    };

    if (ctx.needs(p.w_f) || ctx.needs(p.w_i) || ctx.needs(p.w_g) || ctx.needs(p.w_o)) {
      std::vector<double> dwx(g4 * input);
      dgemm(true, false, g4, input, rows, 1.0, dzin.data(), g4,
            ctx.value(feats).data(), input, 0.0, dwx.data(), input);
      add_gate_rows(p.w_f, dwx, 0, input);
      add_gate_rows(p.w_i, dwx, 1, input);
      add_gate_rows(p.w_g, dwx, 2, input);
      add_gate_rows(p.w_o, dwx, 3, input);
    }
    add_gate_rows(p.u_f, dwh, 0, hidden);
    add_gate_rows(p.u_i, dwh, 1, hidden);
    add_gate_rows(p.u_g, dwh, 2, hidden);
    add_gate_rows(p.u_o, dwh, 3, hidden);

    if (ctx.needs(p.b_f) || ctx.needs(p.b_i) || ctx.needs(p.b_g) || ctx.needs(p.b_o)) {
      std::vector<double> db(g4, 0.0);
      for (std::size_t ts = 0; ts < steps * batch; ++ts) {
        const double* src_row = dz_all.data() + ts * g4;
        for (std::size_t j = 0; j < g4; ++j) db[j] += src_row[j];
      }
      add_gate_rows(p.b_f, db, 0, 1);
      add_gate_rows(p.b_i, db, 1, 1);
      add_gate_rows(p.b_g, db, 2, 1);
      add_gate_rows(p.b_o, db, 3, 1);
    }

    if (ctx.needs(feats)) {
      dgemm(false, false, rows, input, g4, 1.0, dzin.data(), g4, saved->wx.data(), input, 1.0,
            ctx.slot(feats).data(), input);
    }
  };

  return tape.emit("lstm", std::move(out),
                   {feats, p.w_f, p.w_i, p.w_o, p.w_g, p.u_f, p.u_i, p.u_o, p.u_g, p.b_f,
                    p.b_i, p.b_o, p.b_g},
                   std::move(backward));
}

Var lstm_sequence(Tape& tape, Var xs, const LstmGateVars& p) {
  const Tensor& txs = tape.value(xs);
  if (txs.rank() == 2) {
    const std::size_t steps = txs.extent(0);
    if (steps == 0) throw ShapeError("lstm: empty sequence");
    std::vector<std::int32_t> rows(steps);
    for (std::size_t t = 0; t < steps; ++t) rows[t] = static_cast<std::int32_t>(t);
    Var out = lstm_over_rows(tape, xs, rows, 1, steps, p);
    return tape.reshape(out, {tape.value(out).extent(1)});
  }
  if (txs.rank() == 3) {
    const std::size_t batch = txs.extent(0), steps = txs.extent(1), d = txs.extent(2);
    if (steps == 0) throw ShapeError("lstm: empty sequence");
    Var flat = tape.reshape(xs, {batch * steps, d});
    std::vector<std::int32_t> rows(batch * steps);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<std::int32_t>(i);
    return lstm_over_rows(tape, flat, rows, batch, steps, p);
  }
  throw ShapeError("lstm: sequence must be (L,D) or (B,L,D), got " +
                   shape_to_string(txs.shape()));
}

}  // namespace flowcast
