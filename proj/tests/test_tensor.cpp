#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvae/tape.hpp"

using namespace lvae;

namespace {

Tensor ones(Shape s) { return Tensor::full(std::move(s), 1.0f); }

}  // namespace

TEST_CASE("conv2d all-ones 3x3 kernel sums nine ones") {
  Tape t;
  NodeId x = t.constant(ones({1, 1, 3, 3}));
  NodeId w = t.constant(ones({1, 1, 3, 3}));
  NodeId b = t.constant(Tensor::zeros({1}));
  NodeId y = ops::conv2d(t, x, w, b, 1, 0);
  CHECK(t.value(y).shape == Shape{1, 1, 1, 1});
  CHECK(t.value(y).data[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d output geometry follows the stride formula") {
  Tape t;
  Rng rng(1);
  NodeId x = t.constant(rng.normal_tensor({1, 1, 4, 4}));
  NodeId w = t.constant(rng.normal_tensor({1, 1, 2, 2}));
  NodeId b = t.constant(Tensor::zeros({1}));
  NodeId y = ops::conv2d(t, x, w, b, 2, 0);
  CHECK(t.value(y).shape == Shape{1, 1, 2, 2});
}

TEST_CASE("conv2d rejects channel mismatch with a descriptive error") {
  Tape t;
  Rng rng(2);
  NodeId x = t.constant(rng.normal_tensor({1, 3, 4, 4}));
  NodeId w = t.constant(rng.normal_tensor({2, 2, 3, 3}));
  NodeId b = t.constant(Tensor::zeros({2}));
  CHECK_THROWS_WITH_AS(ops::conv2d(t, x, w, b, 1, 1),
                       doctest::Contains("input channels"), std::runtime_error);
}

TEST_CASE("conv2d weight gradient matches central finite differences") {
  Rng rng(3);
  const Tensor x = rng.normal_tensor({2, 3, 8, 8});
  const Tensor w0 = rng.normal_tensor({4, 3, 3, 3});
  auto f = [&](Tape& t, NodeId w) {
    NodeId xn = t.constant(x);
    NodeId b = t.constant(Tensor::zeros({4}));
    return ops::sum(t, ops::conv2d(t, xn, w, b, 1, 0));
  };
  CHECK(grad_check(f, w0, 1e-3) < 1e-3);
}

TEST_CASE("conv2d with same padding preserves spatial dims") {
  Rng rng(4);
  for (int k : {1, 3, 5}) {
    Tape t;
    NodeId x = t.constant(rng.normal_tensor({1, 2, 9, 9}));
    NodeId w = t.constant(rng.normal_tensor({3, 2, k, k}));
    NodeId b = t.constant(Tensor::zeros({3}));
    NodeId y = ops::conv2d(t, x, w, b, 1, (k - 1) / 2);
    CHECK(t.value(y).shape == Shape{1, 3, 9, 9});
  }
}

TEST_CASE("affine identity weight and zero bias pass input through") {
  Tape t;
  Rng rng(5);
  Tensor w = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) w.at2(i, i) = 1.0f;
  const Tensor x = rng.normal_tensor({3, 4});
  NodeId y = ops::affine(t, t.constant(x), t.constant(w), t.constant(Tensor::zeros({4})));
  for (int64_t i = 0; i < x.size(); ++i)
    CHECK(t.value(y).data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("affine on zero input broadcasts the bias") {
  Tape t;
  Rng rng(6);
  const Tensor b = rng.normal_tensor({3});
  NodeId y = ops::affine(t, t.constant(Tensor::zeros({2, 5})),
                         t.constant(rng.normal_tensor({5, 3})), t.constant(b));
  for (int n = 0; n < 2; ++n)
    for (int m = 0; m < 3; ++m) CHECK(t.value(y).at2(n, m) == doctest::Approx(b.data[m]));
}

TEST_CASE("affine rejects mismatched inner dimensions") {
  Tape t;
  Rng rng(7);
  NodeId x = t.constant(rng.normal_tensor({2, 5}));
  NodeId w = t.constant(rng.normal_tensor({4, 3}));
  NodeId b = t.constant(Tensor::zeros({3}));
  CHECK_THROWS_AS(ops::affine(t, x, w, b), std::runtime_error);
}

TEST_CASE("affine gradients match finite differences") {
  Rng rng(8);
  const Tensor x0 = rng.normal_tensor({2, 5});
  const Tensor w = rng.normal_tensor({5, 3});
  const Tensor b = rng.normal_tensor({3});
  auto fx = [&](Tape& t, NodeId x) {
    return ops::sum(t, ops::square(t, ops::affine(t, x, t.constant(w), t.constant(b))));
  };
  CHECK(grad_check(fx, x0, 1e-3) < 1e-3);
  auto fw = [&](Tape& t, NodeId wn) {
    return ops::sum(t, ops::square(t, ops::affine(t, t.constant(x0), wn, t.constant(b))));
  };
  CHECK(grad_check(fw, w, 1e-3) < 1e-3);
}

TEST_CASE("upsample2x replicates each pixel into a 2x2 block") {
  Tape t;
  NodeId x = t.constant(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  NodeId y = ops::upsample2x(t, x);
  const std::vector<float> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(t.value(y).shape == Shape{1, 1, 4, 4});
  CHECK(t.value(y).data == want);
}

TEST_CASE("upsample2x of a constant stays constant") {
  Tape t;
  NodeId y = ops::upsample2x(t, t.constant(Tensor::full({2, 3, 4, 4}, 0.7f)));
  for (float v : t.value(y).data) CHECK(v == doctest::Approx(0.7f));
}

TEST_CASE("upsample2x gradient matches finite differences") {
  Rng rng(9);
  const Tensor x0 = rng.normal_tensor({1, 2, 3, 3});
  auto f = [](Tape& t, NodeId x) { return ops::sum(t, ops::square(t, ops::upsample2x(t, x))); };
  CHECK(grad_check(f, x0, 1e-3) < 1e-3);
}

TEST_CASE("sigmoid(0) is one half") {
  Tape t;
  NodeId y = ops::sigmoid(t, t.constant(Tensor::zeros({3})));
  for (float v : t.value(y).data) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("mul by ones is identity") {
  Tape t;
  Rng rng(10);
  const Tensor x = rng.normal_tensor({4, 5});
  NodeId y = ops::mul(t, t.constant(x), t.constant(ones({4, 5})));
  CHECK(t.value(y).data == x.data);
}

TEST_CASE("binary ops reject shape mismatches") {
  Tape t;
  NodeId a = t.constant(Tensor::zeros({2, 3}));
  NodeId b = t.constant(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(ops::add(t, a, b), std::runtime_error);
  CHECK_THROWS_AS(ops::mul(t, a, b), std::runtime_error);
}

TEST_CASE("elementwise gradients match finite differences across ten seeds") {
  using UnaryOp = NodeId (*)(Tape&, NodeId);
  struct Entry {
    const char* name;
    UnaryOp op;
  };
  const Entry entries[] = {
      {"sigmoid", ops::sigmoid}, {"tanh", ops::tanh}, {"exp", ops::exp},
      {"square", ops::square},
  };
  for (const auto& e : entries) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(100 + seed);
      const Tensor x0 = rng.normal_tensor({3, 4});
      auto f = [&](Tape& t, NodeId x) { return ops::sum(t, e.op(t, x)); };
      INFO(std::string(e.name) << " seed " << seed);
      CHECK(grad_check(f, x0, 1e-3) < 1e-3);
    }
  }
}

TEST_CASE("relu and binary op gradients match finite differences") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    // keep points away from relu's kink so central differences are valid
    Tensor x0 = rng.normal_tensor({4, 4});
    for (float& v : x0.data)
      if (std::fabs(v) < 0.05f) v = 0.1f;
    auto frelu = [](Tape& t, NodeId x) { return ops::sum(t, ops::relu(t, x)); };
    CHECK(grad_check(frelu, x0, 1e-3) < 1e-3);

    const Tensor other = rng.normal_tensor({4, 4});
    auto fmul = [&](Tape& t, NodeId x) {
      return ops::sum(t, ops::mul(t, x, t.constant(other)));
    };
    CHECK(grad_check(fmul, x0, 1e-3) < 1e-3);
    auto fsub = [&](Tape& t, NodeId x) {
      return ops::sum(t, ops::square(t, ops::sub(t, x, t.constant(other))));
    };
    CHECK(grad_check(fsub, x0, 1e-3) < 1e-3);
  }
}

TEST_CASE("concat, slice, reshape and broadcast_channels round gradients correctly") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    const Tensor x0 = rng.normal_tensor({2, 6});
    const Tensor other = rng.normal_tensor({2, 3});
    auto f = [&](Tape& t, NodeId x) {
      NodeId cat = ops::concat(t, x, t.constant(other));
      NodeId sl = ops::slice(t, cat, 2, 7);
      return ops::sum(t, ops::square(t, sl));
    };
    CHECK(grad_check(f, x0, 1e-3) < 1e-3);

    const Tensor g0 = rng.normal_tensor({2, 1, 3, 3});
    auto fb = [](Tape& t, NodeId g) {
      NodeId wide = ops::broadcast_channels(t, g, 3);
      return ops::sum(t, ops::square(t, ops::reshape(t, wide, {2, 27})));
    };
    CHECK(grad_check(fb, g0, 1e-3) < 1e-3);
  }
}

TEST_CASE("backward of x squared at 3 gives 6") {
  Tape t;
  NodeId x = t.leaf(Tensor::scalar(3.0f), true);
  NodeId loss = ops::square(t, x);
  t.backward(loss);
  CHECK(t.grad(x).data[0] == doctest::Approx(6.0f));
}

TEST_CASE("backward of a plain sum yields all-ones gradient") {
  Tape t;
  Rng rng(11);
  NodeId x = t.leaf(rng.normal_tensor({2, 3, 2, 2}), true);
  t.backward(ops::sum(t, x));
  for (float v : t.grad(x).data) CHECK(v == 1.0f);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape t;
  NodeId x = t.leaf(Tensor::zeros({2, 2}), true);
  NodeId y = ops::square(t, x);
  CHECK_THROWS_WITH_AS(t.backward(y), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("running backward twice without re-recording is rejected") {
  Tape t;
  NodeId x = t.leaf(Tensor::scalar(2.0f), true);
  NodeId loss = ops::square(t, x);
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), std::runtime_error);
}

TEST_CASE("three-layer conv-affine-sigmoid network passes full gradient checks") {
  Rng rng(12);
  const Tensor img = rng.normal_tensor({1, 2, 5, 5});
  const Tensor wc = rng.normal_tensor({3, 2, 3, 3});
  const Tensor bc = rng.normal_tensor({3});
  const Tensor wa = rng.normal_tensor({27, 4});
  const Tensor ba = rng.normal_tensor({4});

  struct Param {
    const char* name;
    const Tensor* value;
  };
  const Param params[] = {{"conv.w", &wc}, {"conv.b", &bc}, {"fc.w", &wa}, {"fc.b", &ba}};
  for (const auto& p : params) {
    auto f = [&](Tape& t, NodeId probe) {
      NodeId cw = p.value == &wc ? probe : t.constant(wc);
      NodeId cb = p.value == &bc ? probe : t.constant(bc);
      NodeId aw = p.value == &wa ? probe : t.constant(wa);
      NodeId ab = p.value == &ba ? probe : t.constant(ba);
      NodeId h = ops::relu(t, ops::conv2d(t, t.constant(img), cw, cb, 2, 1));
      NodeId flat = ops::reshape(t, h, {1, 27});
      return ops::sum(t, ops::sigmoid(t, ops::affine(t, flat, aw, ab)));
    };
    INFO(std::string(p.name));
    CHECK(grad_check(f, *p.value, 1e-3) < 1e-3);
  }
}

TEST_CASE("gradient accumulation is linear: one backward of a+b equals two passes") {
  Rng rng(13);
  const Tensor x0 = rng.normal_tensor({3, 3});
  const Tensor c = rng.normal_tensor({3, 3});

  Tape joint;
  NodeId xj = joint.leaf(x0, true);
  NodeId la = ops::sum(joint, ops::square(joint, xj));
  NodeId lb = ops::sum(joint, ops::mul(joint, xj, joint.constant(c)));
  joint.backward(ops::add(joint, la, lb));

  Tape ta;
  NodeId xa = ta.leaf(x0, true);
  ta.backward(ops::sum(ta, ops::square(ta, xa)));
  Tape tb;
  NodeId xb = tb.leaf(x0, true);
  tb.backward(ops::sum(tb, ops::mul(tb, xb, tb.constant(c))));

  for (int64_t i = 0; i < x0.size(); ++i)
    CHECK(joint.grad(xj).data[i] ==
          doctest::Approx(ta.grad(xa).data[i] + tb.grad(xb).data[i]).epsilon(1e-5));
}

TEST_CASE("forward passes on finite inputs stay finite") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(400 + seed);
    Tape t;
    NodeId x = t.constant(rng.normal_tensor({2, 3, 8, 8}));
    NodeId w = t.constant(rng.normal_tensor({4, 3, 3, 3}));
    NodeId b = t.constant(rng.normal_tensor({4}));
    NodeId h = ops::tanh(t, ops::conv2d(t, x, w, b, 2, 1));
    NodeId u = ops::upsample2x(t, ops::sigmoid(t, h));
    CHECK(t.value(u).all_finite());
    NodeId s = ops::exp(t, ops::clamp(t, ops::sum(t, u), -20.0f, 20.0f));
    CHECK(t.value(s).all_finite());
  }
}

TEST_CASE("grad_check is exact for linear functions") {
  Rng rng(14);
  const Tensor c = rng.normal_tensor({4, 4});
  const Tensor x0 = rng.normal_tensor({4, 4});
  auto f = [&](Tape& t, NodeId x) { return ops::sum(t, ops::mul(t, x, t.constant(c))); };
  CHECK(grad_check(f, x0, 1e-3) < 1e-5);
}

TEST_CASE("grad_check bounds the error of a smooth nonlinearity") {
  Rng rng(15);
  const Tensor x0 = rng.normal_tensor({5, 5});
  auto f = [](Tape& t, NodeId x) { return ops::sum(t, ops::sigmoid(t, x)); };
  CHECK(grad_check(f, x0, 1e-3) < 1e-3);
}

TEST_CASE("grad_check detects a gradient corrupted by a factor of two") {
  Rng rng(16);
  const Tensor x0 = rng.normal_tensor({4, 4});
  auto f = [](Tape& t, NodeId x) { return ops::sum(t, ops::sigmoid(t, x)); };

  Tape t;
  NodeId x = t.leaf(x0, true);
  t.backward(f(t, x));
  Tensor corrupted = t.grad(x);
  for (float& v : corrupted.data) v *= 2.0f;

  const double err = max_rel_err(corrupted, numeric_gradient(f, x0, 1e-3));
  CHECK(err == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("clamp passes gradient only inside the interval") {
  Tape t;
  NodeId x = t.leaf(Tensor::from({3}, {-2.0f, 0.5f, 3.0f}), true);
  t.backward(ops::sum(t, ops::clamp(t, x, -1.0f, 1.0f)));
  CHECK(t.grad(x).data[0] == 0.0f);
  CHECK(t.grad(x).data[1] == 1.0f);
  CHECK(t.grad(x).data[2] == 0.0f);
}
