#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flowcast/tensor.hpp"

namespace flowcast {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  std::int32_t id = -1;
  Tape* tape = nullptr;
};

/// Ordered mapping from parameter name to tensor. Iteration order is
/// registration order, so everything built on top of it is deterministic.
class NamedTensorList {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::pair<const std::string&, Tensor&> entry(std::size_t i) {
    return {entries_[i].first, entries_[i].second};
  }
  std::pair<const std::string&, const Tensor&> entry(std::size_t i) const {
    return {entries_[i].first, entries_[i].second};
  }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return entries_; }
  std::size_t total_values() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradientMap = NamedTensorList;

/// Operation kinds accepted by the generic dispatcher.
enum class OpKind {
  kAdd,
  kMultiply,
  kMatmul,
  kSum,
  kMean,
  kConcat,
  kReshape,
  kSlice,
  kRelu,
  kSigmoid,
  kTanh,
};

const char* op_kind_name(OpKind kind);

struct OpAttrs {
  Shape shape;                                        // reshape target
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // slice, half-open per dim
  std::size_t axis = 0;                               // concat axis
};

/// Context handed to an op's backward rule.
class BackwardCtx {
 public:
  BackwardCtx(const Tensor& grad_out, Tape& tape, std::vector<Tensor>& grads)
      : grad_out_(grad_out), tape_(tape), grads_(grads) {}

  const Tensor& grad_out() const { return grad_out_; }
  const Tensor& value(Var v) const;
  bool needs(Var v) const;
  /// Accumulation slot for v's gradient, allocated as zeros on first use.
  Tensor& slot(Var v);
  void accumulate(Var v, const Tensor& g);

 private:
  const Tensor& grad_out_;
  Tape& tape_;
  std::vector<Tensor>& grads_;
};

using BackwardFn = std::function<void(BackwardCtx&)>;

/// Reverse-mode tape. Records each forward operation together with the rule
/// that maps an output gradient to input gradients; backward() replays the
/// records last-to-first. Nodes are topologically ordered by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant leaf (no gradient tracked).
  Var input(Tensor value);
  /// Named parameter leaf; names must be unique per tape.
  Var param(const std::string& name, const Tensor& value);
  /// Register every tensor of `params` and return handles keyed by name.
  std::unordered_map<std::string, Var> params(const NamedTensorList& list);

  // Primitive operations. add/multiply are elementwise on identical shapes;
  // matmul is strictly 2-D.
  Var add(Var a, Var b);
  Var multiply(Var a, Var b);
  Var matmul(Var a, Var b);
  Var sum(Var a);
  Var mean(Var a);
  Var concat(const std::vector<Var>& xs, std::size_t axis);
  Var reshape(Var a, Shape shape);
  Var slice(Var a, const std::vector<std::pair<std::size_t, std::size_t>>& ranges);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  /// a * factor (elementwise by a constant).
  Var scale(Var a, double factor);
  /// x is (N x D), bias is (D); adds bias to every row.
  Var add_bias_rows(Var x, Var bias);

  /// Generic dispatcher over the primitive set.
  Var forward_op(OpKind kind, const std::vector<Var>& inputs, const OpAttrs& attrs = {});

  /// Extension point for composite ops with custom backward rules.
  Var emit(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Gradients of a scalar loss with respect to every parameter on the tape.
  /// Parameters that do not influence the loss get zero gradients.
  GradientMap backward(Var loss);

 private:
  friend class BackwardCtx;

  struct Node {
    const char* op;
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::int32_t param_index = -1;  // index into param_names_ for parameter leaves
  };

  const Node& node(Var v) const;
  void check_owned(Var v, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::int32_t>> params_;  // name, node id
  std::unordered_map<std::string, std::int32_t> param_index_;
};

/// Builds a scalar loss from parameters it registers on the tape.
using LossFn = std::function<Var(Tape&, const NamedTensorList&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares analytic gradients against central finite differences, entry by
/// entry, and reports max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
GradCheckResult grad_check(const NamedTensorList& params, const LossFn& f, double epsilon);

}  // namespace flowcast
