// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "exitwise/error.hpp"
#include "exitwise/ops.hpp"

using namespace exitwise;

TEST_CASE("tensor construction validates shapes") {
  CHECK_THROWS_AS(Tensor({2, 0}, {}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
  const Tensor s = Tensor::scalar(3.f);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.item() == 3.f);
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), ShapeError);
}

TEST_CASE("copies share a node and clone does not") {
  Tensor a({2}, {1.f, 2.f});
  Tensor b = a;
  b.mutable_data()[0] = 5.f;
  CHECK(a.data()[0] == 5.f);
  Tensor c = a.clone();
  c.mutable_data()[0] = 7.f;
  CHECK(a.data()[0] == 5.f);
  CHECK_FALSE(c.same_node(a));
}

TEST_CASE("backward accumulates into leaves and rejects non-scalar losses") {
  Tensor64 x({3}, {1.0, 2.0, 3.0}, true);
  backward(sum(square(x)));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
  backward(sum(square(x)));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
  CHECK_THROWS_AS(backward(square(x)), ShapeError);
}

TEST_CASE("a shared subexpression receives grads from every use") {
  Tensor64 x({1}, {3.0}, true);
  const auto y = mul(x, x);        // x^2
  backward(sum(add(y, mul(y, x))));  // x^2 + x^3 -> 2x + 3x^2
  CHECK(x.grad()[0] == doctest::Approx(6.0 + 27.0));
}

TEST_CASE("no-grad mode records nothing") {
  Tensor64 x({2}, {1.0, 2.0}, true);
  Tensor64 y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = square(x);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("tape order puts inputs before their users") {
  Tensor64 x({2}, {1.0, 2.0}, true);
  const auto y = exp(x);
  const auto z = sum(mul(y, x));
  const auto tape = Tape<double>::record(z);
  REQUIRE(tape.order.size() >= 4);
  CHECK(tape.order.back() == z.node());
  auto pos = [&](const NodePtr<double>& n) {
    return std::find(tape.order.begin(), tape.order.end(), n) - tape.order.begin();
  };
  CHECK(pos(x.node()) < pos(y.node()));
}

TEST_CASE("backward releases the intermediate graph") {
  Tensor64 x({2}, {1.0, 2.0}, true);
  auto y = exp(x);
  auto loss = sum(y);
  backward(loss);
  CHECK(loss.node()->parents.empty());
  CHECK(y.node()->parents.empty());
}
