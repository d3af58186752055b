#include <doctest.h>

#include <cmath>
#include <cstring>

#include "flowcast/autodiff.hpp"
#include "flowcast/errors.hpp"
#include "flowcast/rng.hpp"

using namespace flowcast;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(rng, lo, hi);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 3}).item(), ShapeError);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("matmul identity and hand-expanded product") {
  Tape tape;
  Var eye = tape.input(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = tape.input(Tensor({2, 2}, {1, 2, 3, 4}));
  Var prod = tape.matmul(eye, m);
  CHECK(tape.value(prod).vec() == std::vector<double>{1, 2, 3, 4});

  Var a = tape.input(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = tape.input(Tensor({2, 2}, {5, 6, 7, 8}));
  Var ab = tape.matmul(a, b);
  CHECK(tape.value(ab).vec() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("forward_op dispatch covers the primitive set") {
  Tape tape;
  Var x = tape.input(Tensor({3}, {-1, 0, 2}));
  Var r = tape.forward_op(OpKind::kRelu, {x});
  CHECK(tape.value(r).vec() == std::vector<double>{0, 0, 2});

  Var s = tape.forward_op(OpKind::kSum, {x});
  CHECK(tape.value(s).item() == doctest::Approx(1.0));

  Var mn = tape.forward_op(OpKind::kMean, {x});
  CHECK(tape.value(mn).item() == doctest::Approx(1.0 / 3.0));

  OpAttrs reshape_attrs;
  reshape_attrs.shape = {3, 1};
  Var col = tape.forward_op(OpKind::kReshape, {x}, reshape_attrs);
  CHECK(tape.value(col).shape() == Shape{3, 1});

  OpAttrs slice_attrs;
  slice_attrs.ranges = {{1, 3}};
  Var tail = tape.forward_op(OpKind::kSlice, {x}, slice_attrs);
  CHECK(tape.value(tail).vec() == std::vector<double>{0, 2});

  OpAttrs concat_attrs;
  concat_attrs.axis = 0;
  Var cat = tape.forward_op(OpKind::kConcat, {x, tail}, concat_attrs);
  CHECK(tape.value(cat).vec() == std::vector<double>{-1, 0, 2, 0, 2});
}

TEST_CASE("shape mismatches name the operation and both shapes") {
  Tape tape;
  Var a = tape.input(Tensor({2, 3}, 1.0));
  Var b = tape.input(Tensor({4, 5}, 1.0));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), "matmul: shape mismatch (2x3) vs (4x5)", ShapeError);
  CHECK_THROWS_WITH_AS(tape.add(a, b), "add: shape mismatch (2x3) vs (4x5)", ShapeError);
}

TEST_CASE("backward of sum yields all-ones gradient") {
  Tape tape;
  Rng rng = derive_rng(11, 0);
  Var x = tape.param("x", random_tensor({3, 4}, rng));
  GradientMap grads = tape.backward(tape.sum(x));
  for (std::size_t i = 0; i < grads.at("x").size(); ++i) CHECK(grads.at("x")[i] == 1.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tape tape;
  Var x = tape.param("x", Tensor({1}, {3.0}));
  Var loss = tape.sum(tape.multiply(x, x));
  GradientMap grads = tape.backward(loss);
  CHECK(grads.at("x")[0] == doctest::Approx(6.0));
}

TEST_CASE("backward through sigmoid at zero gives 0.25") {
  Tape tape;
  Var x = tape.param("x", Tensor({1}, {0.0}));
  GradientMap grads = tape.backward(tape.sum(tape.sigmoid(x)));
  CHECK(grads.at("x")[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
  Tape tape;
  Var x = tape.param("x", Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(x), ShapeError);

  Tape other;
  Var y = other.input(Tensor::scalar(1.0));
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("unused parameters receive zero gradients") {
  Tape tape;
  Var x = tape.param("x", Tensor({2}, {1.0, 2.0}));
  Var unused = tape.param("unused", Tensor({3}, 1.0));
  (void)unused;
  GradientMap grads = tape.backward(tape.sum(x));
  CHECK(grads.at("unused").shape() == Shape{3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(grads.at("unused")[i] == 0.0);
}

// Every differentiable primitive against central differences on random inputs.
TEST_CASE("primitive gradients match finite differences") {
  Rng rng = derive_rng(42, 0);
  auto check = [&](const char* name, const LossFn& f, const NamedTensorList& params) {
    GradCheckResult r = grad_check(params, f, 1e-5);
    INFO(name, " worst ", r.worst_param, "[", r.worst_index, "] analytic ", r.analytic,
         " numeric ", r.numeric);
    CHECK(r.max_rel_error < 1e-6);
  };

  {
    NamedTensorList p;
    p.add("a", random_tensor({3, 4}, rng));
    p.add("b", random_tensor({3, 4}, rng));
    check("add+multiply", [](Tape& t, const NamedTensorList& p) {
      Var a = t.param("a", p.at("a"));
      Var b = t.param("b", p.at("b"));
      return t.sum(t.multiply(t.add(a, b), b));
    }, p);
  }
  {
    NamedTensorList p;
    p.add("a", random_tensor({3, 4}, rng));
    p.add("b", random_tensor({4, 2}, rng));
    check("matmul", [](Tape& t, const NamedTensorList& p) {
      Var a = t.param("a", p.at("a"));
      Var b = t.param("b", p.at("b"));
      return t.mean(t.tanh(t.matmul(a, b)));
    }, p);
  }
  {
    // keep relu inputs away from the kink
    Tensor a({20});
    for (std::size_t i = 0; i < a.size(); ++i) {
      double v = uniform(rng, 0.2, 1.0);
      a[i] = (i % 2) ? v : -v;
    }
    NamedTensorList p;
    p.add("a", a);
    check("relu+sigmoid", [](Tape& t, const NamedTensorList& p) {
      Var a = t.param("a", p.at("a"));
      return t.sum(t.sigmoid(t.relu(a)));
    }, p);
  }
  {
    NamedTensorList p;
    p.add("a", random_tensor({2, 3}, rng));
    p.add("b", random_tensor({1, 3}, rng));
    check("concat+slice+reshape", [](Tape& t, const NamedTensorList& p) {
      Var a = t.param("a", p.at("a"));
      Var b = t.param("b", p.at("b"));
      Var cat = t.concat({a, b}, 0);                       // (3,3)
      Var sl = t.slice(cat, {{0, 3}, {1, 3}});             // (3,2)
      Var flat = t.reshape(sl, {6});
      return t.sum(t.multiply(flat, flat));
    }, p);
  }
  {
    NamedTensorList p;
    p.add("x", random_tensor({4, 3}, rng));
    p.add("bias", random_tensor({3}, rng));
    check("bias rows + scale", [](Tape& t, const NamedTensorList& p) {
      Var x = t.param("x", p.at("x"));
      Var b = t.param("bias", p.at("bias"));
      return t.mean(t.scale(t.add_bias_rows(x, b), 2.5));
    }, p);
  }
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  Rng rng = derive_rng(7, 0);
  Tensor xv = random_tensor({5}, rng);

  auto grads_for = [&](int which) {
    Tape tape;
    Var x = tape.param("x", xv);
    Var l1 = tape.sum(tape.multiply(x, x));
    Var l2 = tape.sum(tape.sigmoid(x));
    Var loss = which == 0 ? l1 : which == 1 ? l2 : tape.add(l1, l2);
    return tape.backward(loss);
  };

  GradientMap g1 = grads_for(0), g2 = grads_for(1), g12 = grads_for(2);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    CHECK(g12.at("x")[i] == doctest::Approx(g1.at("x")[i] + g2.at("x")[i]).epsilon(1e-12));
  }
}

TEST_CASE("replaying an identical tape yields bitwise-identical gradients") {
  auto run = [] {
    Rng rng = derive_rng(99, 1);
    Tape tape;
    Var x = tape.param("x", random_tensor({4, 4}, rng));
    Var w = tape.param("w", random_tensor({4, 4}, rng));
    Var loss = tape.mean(tape.tanh(tape.matmul(x, w)));
    return tape.backward(loss);
  };
  GradientMap a = run();
  GradientMap b = run();
  CHECK(bitwise_equal(a.at("x"), b.at("x")));
  CHECK(bitwise_equal(a.at("w"), b.at("w")));
}

TEST_CASE("grad_check on a quadratic is near machine precision") {
  NamedTensorList p;
  Rng rng = derive_rng(5, 0);
  p.add("x", random_tensor({6}, rng));
  GradCheckResult r = grad_check(p, [](Tape& t, const NamedTensorList& p) {
    Var x = t.param("x", p.at("x"));
    return t.sum(t.multiply(x, x));
  }, 1e-5);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("grad_check on a constant function reports zero error") {
  NamedTensorList p;
  p.add("x", Tensor({3}, {1.0, 2.0, 3.0}));
  GradCheckResult r = grad_check(p, [](Tape& t, const NamedTensorList& p) {
    Var x = t.param("x", p.at("x"));
    (void)x;
    return t.input(Tensor::scalar(4.0));
  }, 1e-5);
  CHECK(r.max_rel_error == 0.0);
}

TEST_CASE("forward results on finite inputs stay finite") {
  Rng rng = derive_rng(3, 0);
  Tape tape;
  Var x = tape.input(random_tensor({8, 8}, rng, -10.0, 10.0));
  Var y = tape.tanh(tape.matmul(x, x));
  CHECK(tape.value(y).all_finite());
}
