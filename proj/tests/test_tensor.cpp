#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "checks.hpp"
#include "oracles.hpp"
#include "tensor.hpp"

using namespace voxsynth;

namespace {

using check::OpCase;
using check::op_cases;

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("elementwise and softmax examples") {
    Tape tape;
    auto a = tape.constant(Tensor({2}, {1, 2}));
    auto b = tape.constant(Tensor({2}, {3, 4}));
    CHECK(add(a, b).value().data == std::vector<double>{4, 6});
    const auto s = softmax(tape.constant(Tensor({3}, {0, 0, 0}))).value().data;
    for (double v : s) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("conv3d of ones is a box sum") {
    Tape tape;
    auto x = tape.constant(Tensor({1, 4, 4, 4}, 1.0));
    auto w = tape.constant(Tensor({1, 1, 3, 3, 3}, 1.0));
    auto b = tape.constant(Tensor({1}, 0.0));
    const auto y = conv3d(x, w, b).value();
    CHECK(y.shape == Shape{1, 2, 2, 2});
    for (double v : y.data) CHECK(v == 27.0);
  }

  TEST_CASE("conv3d matches direct summation") {
    std::mt19937_64 rng(11);
    for (const auto& [stride, pad] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
      const auto x = oracle::random_tensor({2, 5, 6, 4}, rng);
      const auto w = oracle::random_tensor({3, 2, 3, 3, 3}, rng);
      const auto b = oracle::random_tensor({3}, rng);
      Tape tape;
      const auto y = conv3d(tape.constant(x), tape.constant(w), tape.constant(b), {stride, pad}).value();
      const auto ref = oracle::conv3d(x, w, b, stride, pad);
      REQUIRE(y.shape == ref.shape);
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("conv_transpose3d is the adjoint of conv3d") {
    std::mt19937_64 rng(12);
    for (std::size_t stride : {1u, 2u}) {
      const auto x = oracle::random_tensor({2, 6, 6, 6}, rng);
      const auto w = oracle::random_tensor({3, 2, 4, 4, 4}, rng);
      Tape tape;
      const Conv3dOptions opt{stride, 1};
      const auto y = conv3d(tape.constant(x), tape.constant(w), tape.constant(Tensor({3}, 0.0)), opt).value();
      const auto u = oracle::random_tensor(y.shape, rng);
      // conv_transpose3d takes its kernel as [Cin_of_transpose, Cout, k,k,k] = [3,2,k,k,k], the same layout.
      const auto v = conv_transpose3d(tape.constant(u), tape.constant(w), tape.constant(Tensor({2}, 0.0)), opt).value();
      REQUIRE(v.shape == x.shape);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) lhs += y.data[i] * u.data[i];
      for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * v.data[i];
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }

  TEST_CASE("conv then transposed conv round-trips the shape") {
    for (const Shape& in : {Shape{1, 8, 8, 8}, Shape{4, 16, 8, 12}, Shape{2, 6, 6, 6}}) {
      for (const auto& [k, stride, pad] : std::vector<std::array<std::size_t, 3>>{{3, 1, 1}, {4, 2, 1}, {1, 1, 0}}) {
        const Shape w{3, in[0], k, k, k};
        const auto mid = conv3d_output_shape(in, w, {stride, pad});
        const auto back = conv_transpose3d_output_shape(mid, w, {stride, pad});
        CHECK(back == in);
      }
    }
  }

  TEST_CASE("backward examples") {
    {
      Tape tape;
      auto x = tape.leaf(Tensor::scalar(3.0), true);
      tape.backward(mul(x, x));
      CHECK(tape.grad(x).data[0] == 6.0);
    }
    {
      Tape tape;
      auto w = tape.leaf(Tensor::scalar(1.0), true);
      auto x = tape.constant(Tensor::scalar(2.0));
      auto y = tape.constant(Tensor::scalar(4.0));
      tape.backward(mse(mul(w, x), y));
      CHECK(tape.grad(w).data[0] == doctest::Approx(-8.0).epsilon(1e-15));
    }
    {
      Tape tape;
      auto x = tape.leaf(Tensor({3}, {1, 2, 3}), true);
      auto c = tape.constant(Tensor({3}, {4, 5, 6}));
      tape.backward(add(sum(c), scale(sum(detach(x)), 2.0)));
      CHECK(tape.grad(x).data == std::vector<double>{0, 0, 0});
    }
  }

  TEST_CASE("finite_diff_check examples") {
    std::mt19937_64 rng(5);
    const auto x = oracle::random_tensor({7}, rng);
    CHECK(finite_diff_check([](Tape&, Var v) { return sum(mul(v, v)); }, x, 1e-5) < 1e-6);
    CHECK(finite_diff_check(
              [](Tape& t, Var v) { return sum(mul(v, t.constant(Tensor({7}, {1, -2, 3, .5, 0, 9, -1})))); }, x,
              1e-5) < 1e-9);

    // two-layer softmax classifier; x holds the first-layer weights
    const auto inputs = oracle::random_tensor({6, 4}, rng);
    const auto w2 = oracle::random_tensor({5, 3}, rng);
    const std::vector<std::size_t> targets = {0, 2, 1, 1, 0, 2};
    const auto w1 = oracle::random_tensor({4, 5}, rng);
    auto net = [&](Tape& t, Var w) {
      auto h = leaky_relu(matmul(t.constant(inputs), w));
      auto logits = matmul(h, t.constant(w2));
      auto p = softmax(logits);
      return add(cross_entropy(logits, targets), scale(sum(mul(p, p)), 0.1));
    };
    CHECK(finite_diff_check(net, w1, 1e-5) < 1e-4);
    CHECK_THROWS_AS(finite_diff_check(net, w1, 0.5), std::invalid_argument);
  }

  TEST_CASE("every op passes gradient checks on 10 seeded inputs") {
    for (const auto& c : op_cases()) {
      for (std::size_t which = 0; which < c.inputs.size(); ++which) {
        const double worst = check::op_worst(c, which);
        INFO(c.name << " input " << which);
        CHECK(worst < 1e-4);
      }
    }
  }

  TEST_CASE("backward of a composition equals the chained brute-force Jacobians") {
    std::mt19937_64 rng(21);
    const auto w = oracle::random_tensor({4, 3}, rng);
    const auto r = oracle::random_tensor({2, 3}, rng);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x0 = oracle::random_tensor({2, 4}, rng);
      // g1(x) = leaky_relu(x W), g2(h) = softmax(h), g3(p) = sum(p * R)
      auto g1 = [&](const std::vector<double>& v) {
        Tape t;
        return leaky_relu(matmul(t.constant(Tensor({2, 4}, v)), t.constant(w))).value().data;
      };
      auto g2 = [&](const std::vector<double>& v) {
        Tape t;
        return softmax(t.constant(Tensor({2, 3}, v))).value().data;
      };
      auto g3 = [&](const std::vector<double>& v) {
        Tape t;
        return sum(mul(t.constant(Tensor({2, 3}, v)), t.constant(r))).value().data;
      };
      const auto h = g1(x0.data);
      const auto J1 = oracle::jacobian(g1, x0.data);
      const auto J2 = oracle::jacobian(g2, h);
      const auto J3 = oracle::jacobian(g3, g2(h));
      const auto chain = oracle::matmul(oracle::matmul(J3, J2), J1);

      Tape tape;
      auto x = tape.leaf(x0, true);
      tape.backward(sum(mul(softmax(leaky_relu(matmul(x, tape.constant(w)))), tape.constant(r))));
      const auto g = tape.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data[i] == doctest::Approx(chain[0][i]).epsilon(1e-6));
    }
  }

  TEST_CASE("every tracked leaf receives a gradient of matching shape") {
    Tape tape;
    auto a = tape.leaf(Tensor({2, 3}, 0.5), true);
    auto b = tape.leaf(Tensor({3, 4}, 0.25), true);
    auto unused = tape.leaf(Tensor({5}, 1.0), true);
    tape.backward(sum(matmul(a, b)));
    CHECK(tape.grad(a).shape == a.shape());
    CHECK(tape.grad(b).shape == b.shape());
    CHECK(tape.grad(unused).shape == unused.shape());
    CHECK(tape.grad(unused).data == std::vector<double>(5, 0.0));
  }

  TEST_CASE("errors name the op and both shapes") {
    Tape tape;
    auto a = tape.constant(Tensor({2, 3}));
    auto b = tape.constant(Tensor({3, 2}));
    try {
      add(a, b);
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("add") != std::string::npos);
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[3,2]") != std::string::npos);
    }
    try {
      matmul(a, a);
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  }

  TEST_CASE("backward requires a scalar loss and a reset before reuse") {
    Tape tape;
    auto x = tape.leaf(Tensor({3}, 1.0), true);
    auto y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
    tape.backward(sum(y));
    CHECK_THROWS_AS(scale(x, 1.0), std::logic_error);
    tape.reset();
    CHECK(tape.size() == 0);
    auto z = tape.leaf(Tensor::scalar(2.0), true);
    tape.backward(mul(z, z));
    CHECK(tape.grad(z).data[0] == 4.0);
  }

  TEST_CASE("non-finite forward results are rejected") {
    Tape tape;
    auto big = tape.constant(Tensor({1}, {1e308}));
    CHECK_THROWS_AS(scale(big, 10.0), std::domain_error);
  }

  TEST_CASE("tape records parents before children") {
    Tape tape;
    auto a = tape.leaf(Tensor({2}, 1.0), true);
    auto b = tape.leaf(Tensor({2}, 2.0), true);
    auto c = mul(a, b);
    auto d = add(c, a);
    CHECK(a.id() < c.id());
    CHECK(b.id() < c.id());
    CHECK(c.id() < d.id());
    CHECK(d.requires_grad());
    auto e = add(tape.constant(Tensor({2})), tape.constant(Tensor({2})));
    CHECK_FALSE(e.requires_grad());
  }
}
