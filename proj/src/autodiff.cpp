#include "flowcast/autodiff.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>

#include "flowcast/blas.hpp"
#include "flowcast/errors.hpp"

namespace flowcast {

// ---------------------------------------------------------------------------
// NamedTensorList

void NamedTensorList::add(const std::string& name, Tensor value) {
  if (index_.count(name)) {
    throw ShapeError("named tensors: duplicate name '" + name + "'");
  }
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
}

Tensor& NamedTensorList::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("named tensors: unknown name '" + name + "'");
  return entries_[it->second].second;
}

const Tensor& NamedTensorList::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("named tensors: unknown name '" + name + "'");
  return entries_[it->second].second;
}

std::size_t NamedTensorList::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSlice: return "slice";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// BackwardCtx

const Tensor& BackwardCtx::value(Var v) const { return tape_.value(v); }

bool BackwardCtx::needs(Var v) const { return tape_.requires_grad(v); }

Tensor& BackwardCtx::slot(Var v) {
  Tensor& g = grads_[static_cast<std::size_t>(v.id)];
  if (g.empty()) g = Tensor::zeros(tape_.value(v).shape());
  return g;
}

void BackwardCtx::accumulate(Var v, const Tensor& g) {
  Tensor& slot_ref = slot(v);
  const double* src = g.data();
  double* dst = slot_ref.data();
  for (std::size_t i = 0; i < slot_ref.size(); ++i) dst[i] += src[i];
}

// ---------------------------------------------------------------------------
// Tape

const Tape::Node& Tape::node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

void Tape::check_owned(Var v, const char* op) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ShapeError(std::string(op) + ": operand is not a value on this tape");
  }
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{"input", std::move(value), {}, nullptr, false, -1});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1), this};
}

Var Tape::param(const std::string& name, const Tensor& value) {
  if (param_index_.count(name)) {
    throw ShapeError("param: duplicate parameter '" + name + "' on tape");
  }
  nodes_.push_back(Node{"param", value, {}, nullptr, true,
                        static_cast<std::int32_t>(params_.size())});
  std::int32_t id = static_cast<std::int32_t>(nodes_.size() - 1);
  params_.emplace_back(name, id);
  param_index_[name] = id;
  return Var{id, this};
}

std::unordered_map<std::string, Var> Tape::params(const NamedTensorList& list) {
  std::unordered_map<std::string, Var> out;
  out.reserve(list.size());
  for (const auto& [name, tensor] : list.items()) out.emplace(name, param(name, tensor));
  return out;
}

const Tensor& Tape::value(Var v) const {
  check_owned(v, "value");
  return node(v).value;
}

bool Tape::requires_grad(Var v) const {
  check_owned(v, "requires_grad");
  return node(v).requires_grad;
}

Var Tape::emit(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) {
    check_owned(in, op);
    needs = needs || node(in).requires_grad;
  }
  nodes_.push_back(Node{op, std::move(value), std::move(inputs),
                        needs ? std::move(backward) : nullptr, needs, -1});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1), this};
}

namespace {
void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}
}  // namespace

Var Tape::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape("add", ta, tb);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
  return emit("add", std::move(out), {a, b}, [a, b](BackwardCtx& ctx) {
    if (ctx.needs(a)) ctx.accumulate(a, ctx.grad_out());
    if (ctx.needs(b)) ctx.accumulate(b, ctx.grad_out());
  });
}

Var Tape::multiply(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require_same_shape("multiply", ta, tb);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
  return emit("multiply", std::move(out), {a, b}, [a, b](BackwardCtx& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(a)) {
      Tensor& ga = ctx.slot(a);
      const Tensor& vb = ctx.value(b);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (ctx.needs(b)) {
      Tensor& gb = ctx.slot(b);
      const Tensor& va = ctx.value(a);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0)) {
    throw ShapeError("matmul: shape mismatch " + shape_to_string(ta.shape()) + " vs " +
                     shape_to_string(tb.shape()));
  }
  std::size_t m = ta.extent(0), k = ta.extent(1), n = tb.extent(1);
  Tensor out({m, n});
  matmul_rowmajor(ta.data(), tb.data(), out.data(), m, k, n);
  return emit("matmul", std::move(out), {a, b}, [a, b, m, k, n](BackwardCtx& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(a)) {
      // dA += G * B^T
      dgemm(false, true, m, k, n, 1.0, g.data(), n, ctx.value(b).data(), n, 1.0,
            ctx.slot(a).data(), k);
    }
    if (ctx.needs(b)) {
      // dB += A^T * G
      dgemm(true, false, k, n, m, 1.0, ctx.value(a).data(), k, g.data(), n, 1.0,
            ctx.slot(b).data(), n);
    }
  });
}

Var Tape::sum(Var a) {
  const Tensor& ta = value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
  return emit("sum", Tensor::scalar(s), {a}, [a](BackwardCtx& ctx) {
    if (!ctx.needs(a)) return;
    double g = ctx.grad_out().item();
    Tensor& ga = ctx.slot(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var Tape::mean(Var a) {
  const Tensor& ta = value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
  double inv_n = 1.0 / static_cast<double>(ta.size());
  return emit("mean", Tensor::scalar(s * inv_n), {a}, [a, inv_n](BackwardCtx& ctx) {
    if (!ctx.needs(a)) return;
    double g = ctx.grad_out().item() * inv_n;
    Tensor& ga = ctx.slot(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var Tape::concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = value(xs[0]).shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(first));
  }
  Shape out_shape = first;
  std::size_t axis_total = first[axis];
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Shape& s = value(xs[i]).shape();
    if (s.size() != first.size()) {
      throw ShapeError("concat: shape mismatch " + shape_to_string(first) + " vs " +
                       shape_to_string(s));
    }
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: shape mismatch " + shape_to_string(first) + " vs " +
                         shape_to_string(s));
      }
    }
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  Tensor out(out_shape);
  std::size_t out_row = axis_total * inner;
  std::size_t offset = 0;
  for (Var x : xs) {
    const Tensor& tx = value(x);
    std::size_t rows = tx.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = tx.data() + o * rows;
      double* dst = out.data() + o * out_row + offset;
      for (std::size_t i = 0; i < rows; ++i) dst[i] = src[i];
    }
    offset += rows;
  }

  std::vector<Var> inputs = xs;
  return emit("concat", std::move(out), std::move(inputs),
              [xs, outer, out_row](BackwardCtx& ctx) {
                const Tensor& g = ctx.grad_out();
                std::size_t offset = 0;
                for (Var x : xs) {
                  std::size_t rows = ctx.value(x).size() / outer;
                  if (ctx.needs(x)) {
                    Tensor& gx = ctx.slot(x);
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* src = g.data() + o * out_row + offset;
                      double* dst = gx.data() + o * rows;
                      for (std::size_t i = 0; i < rows; ++i) dst[i] += src[i];
                    }
                  }
                  offset += rows;
                }
              });
}

Var Tape::reshape(Var a, Shape shape) {
  Tensor out = value(a).reshaped(std::move(shape));
  Shape in_shape = value(a).shape();
  return emit("reshape", std::move(out), {a}, [a, in_shape](BackwardCtx& ctx) {
    if (!ctx.needs(a)) return;
    Tensor& ga = ctx.slot(a);
    const Tensor& g = ctx.grad_out();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::slice(Var a, const std::vector<std::pair<std::size_t, std::size_t>>& ranges) {
  const Tensor& ta = value(a);
  if (ranges.size() != ta.rank()) {
    throw ShapeError("slice: got " + std::to_string(ranges.size()) + " ranges for tensor " +
                     shape_to_string(ta.shape()));
  }
  Shape out_shape(ta.rank());
  for (std::size_t d = 0; d < ta.rank(); ++d) {
    auto [lo, hi] = ranges[d];
    if (lo >= hi || hi > ta.extent(d)) {
      throw ShapeError("slice: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                       ") invalid for dim " + std::to_string(d) + " of " +
                       shape_to_string(ta.shape()));
    }
    out_shape[d] = hi - lo;
  }

  // strides of the input
  std::vector<std::size_t> stride(ta.rank(), 1);
  for (std::size_t d = ta.rank(); d-- > 1;) stride[d - 1] = stride[d] * ta.extent(d);

  Tensor out(out_shape);
  std::size_t n = out.size();
  std::vector<std::size_t> idx(ta.rank(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < ta.rank(); ++d) src += (ranges[d].first + idx[d]) * stride[d];
    out[i] = ta[src];
    for (std::size_t d = ta.rank(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }

  return emit("slice", std::move(out), {a},
              [a, ranges, stride, out_shape](BackwardCtx& ctx) {
                if (!ctx.needs(a)) return;
                Tensor& ga = ctx.slot(a);
                const Tensor& g = ctx.grad_out();
                std::vector<std::size_t> idx(out_shape.size(), 0);
                for (std::size_t i = 0; i < g.size(); ++i) {
                  std::size_t dst = 0;
                  for (std::size_t d = 0; d < out_shape.size(); ++d)
                    dst += (ranges[d].first + idx[d]) * stride[d];
                  ga[dst] += g[i];
                  for (std::size_t d = out_shape.size(); d-- > 0;) {
                    if (++idx[d] < out_shape[d]) break;
                    idx[d] = 0;
                  }
                }
              });
}

Var Tape::relu(Var a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  return emit("relu", std::move(out), {a}, [a](BackwardCtx& ctx) {
    if (!ctx.needs(a)) return;
    Tensor& ga = ctx.slot(a);
    const Tensor& g = ctx.grad_out();
    const Tensor& va = ctx.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (va[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var Tape::sigmoid(Var a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ta[i]));
  Var result = emit("sigmoid", std::move(out), {a}, nullptr);
  // backward uses the stored output value
  nodes_.back().backward = [a, result](BackwardCtx& ctx) {
    if (!ctx.needs(a)) return;
    Tensor& ga = ctx.slot(a);
    const Tensor& g = ctx.grad_out();
    const Tensor& y = ctx.value(result);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return result;
}

Var Tape::tanh(Var a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(ta[i]);
  Var result = emit("tanh", std::move(out), {a}, nullptr);
  nodes_.back().backward = [a, result](BackwardCtx& ctx) {
    if (!ctx.needs(a)) return;
    Tensor& ga = ctx.slot(a);
    const Tensor& g = ctx.grad_out();
    const Tensor& y = ctx.value(result);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return result;
}

Var Tape::scale(Var a, double factor) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * ta[i];
  return emit("scale", std::move(out), {a}, [a, factor](BackwardCtx& ctx) {
    if (!ctx.needs(a)) return;
    Tensor& ga = ctx.slot(a);
    const Tensor& g = ctx.grad_out();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
  });
}

Var Tape::add_bias_rows(Var x, Var bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  if (tx.rank() != 2 || tb.rank() != 1 || tx.extent(1) != tb.extent(0)) {
    throw ShapeError("add_bias_rows: shape mismatch " + shape_to_string(tx.shape()) + " vs " +
                     shape_to_string(tb.shape()));
  }
  std::size_t rows = tx.extent(0), cols = tx.extent(1);
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at2(r, c) = tx.at2(r, c) + tb[c];
  return emit("add_bias_rows", std::move(out), {x, bias},
              [x, bias, rows, cols](BackwardCtx& ctx) {
                const Tensor& g = ctx.grad_out();
                if (ctx.needs(x)) ctx.accumulate(x, g);
                if (ctx.needs(bias)) {
                  Tensor& gb = ctx.slot(bias);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                }
              });
}

Var Tape::forward_op(OpKind kind, const std::vector<Var>& inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(op_kind_name(kind)) + ": expected " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kAdd: need(2); return add(inputs[0], inputs[1]);
    case OpKind::kMultiply: need(2); return multiply(inputs[0], inputs[1]);
    case OpKind::kMatmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::kSum: need(1); return sum(inputs[0]);
    case OpKind::kMean: need(1); return mean(inputs[0]);
    case OpKind::kConcat: return concat(inputs, attrs.axis);
    case OpKind::kReshape: need(1); return reshape(inputs[0], attrs.shape);
    case OpKind::kSlice: need(1); return slice(inputs[0], attrs.ranges);
    case OpKind::kRelu: need(1); return relu(inputs[0]);
    case OpKind::kSigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::kTanh: need(1); return tanh(inputs[0]);
  }
  throw ShapeError("forward_op: unknown kind");
}

GradientMap Tape::backward(Var loss) {
  check_owned(loss, "backward");
  const Node& loss_node = node(loss);
  if (loss_node.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_to_string(loss_node.value.shape()));
  }

  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.id)] = Tensor({1}, 1.0);

  static const bool profile = std::getenv("FLOWCAST_PROFILE") != nullptr;
  std::map<const char*, double> op_ms;

  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backward) continue;
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) continue;  // value did not contribute to the loss
    BackwardCtx ctx(g, *this, grads);
    if (profile) {
      auto t0 = std::chrono::steady_clock::now();
      n.backward(ctx);
      auto t1 = std::chrono::steady_clock::now();
      op_ms[n.op] += std::chrono::duration<double, std::milli>(t1 - t0).count();
    } else {
      n.backward(ctx);
    }
  }
  if (profile) {
    for (const auto& [op, t] : op_ms) std::fprintf(stderr, "backward %-12s %8.2f ms\n", op, t);
  }

  GradientMap out;
  for (const auto& [name, id] : params_) {
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) {
      out.add(name, Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape()));
    } else {
      out.add(name, std::move(g));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

GradCheckResult grad_check(const NamedTensorList& params, const LossFn& f, double epsilon) {
  if (epsilon <= 0.0) throw ShapeError("grad_check: epsilon must be positive");

  GradientMap analytic;
  {
    Tape tape;
    Var loss = f(tape, params);
    analytic = tape.backward(loss);
  }

  auto eval = [&](const NamedTensorList& p) {
    Tape tape;
    Var loss = f(tape, p);
    return tape.value(loss).item();
  };

  NamedTensorList work = params;
  GradCheckResult result;
  for (std::size_t e = 0; e < work.size(); ++e) {
    auto [name, tensor] = work.entry(e);
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      double saved = tensor[i];
      tensor[i] = saved + epsilon;
      double up = eval(work);
      tensor[i] = saved - epsilon;
      double down = eval(work);
      tensor[i] = saved;

      double numeric = (up - down) / (2.0 * epsilon);
      double a = grad[i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace flowcast
