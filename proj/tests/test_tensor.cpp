/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "core/fp16.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace medden;

TEST_CASE("create: fill, buffer passthrough, length mismatch") {
  Tensor z = Tensor::full({2, 2}, 0.0, DType::F32);
  CHECK(z.numel() == 4);
  for (int i = 0; i < 4; ++i) CHECK(z.at(i) == 0.0);

  Tensor t = Tensor::from_buffer({3}, {1.0, 2.0, 3.0}, DType::F32);
  CHECK(t.at(0) == 1.0);
  CHECK(t.at(2) == 3.0);

  CHECK_THROWS_AS(Tensor::from_buffer({2}, {1.0, 2.0, 3.0}, DType::F32), SizeError);
}

TEST_CASE("binary16 rounding: representable, round-to-even, overflow") {
  CHECK(round_f16(1.0f) == 1.0f);
  CHECK(round_f16(2049.0f) == 2048.0f);       // tie in [2048,4096), step 2, even wins
  CHECK(round_f16(2051.0f) == 2052.0f);       // tie the other way
  CHECK(std::isinf(round_f16(65520.0f)));     // beyond the last tie point
  CHECK(round_f16(65504.0f) == 65504.0f);     // largest finite
  CHECK(round_f16(65519.9f) == 65504.0f);
  CHECK(std::isnan(round_f16(std::numeric_limits<float>::quiet_NaN())));
  CHECK(std::isinf(round_f16(std::numeric_limits<float>::infinity())));
  CHECK(round_f16(-0.0f) == 0.0f);
  CHECK(std::signbit(round_f16(-0.0f)));

  // Subnormals survive down to 2^-24 and flush below.
  CHECK(round_f16(std::ldexp(1.0f, -24)) == std::ldexp(1.0f, -24));
  CHECK(round_f16(std::ldexp(1.0f, -26)) == 0.0f);
}

TEST_CASE("binary16 round-trip is idempotent on random values") {
  CounterRng rng(99);
  for (int i = 0; i < 20000; ++i) {
    const float x = static_cast<float>(rng.next_uniform(-70000.0, 70000.0));
    const float once = round_f16(x);
    if (std::isfinite(once)) {
      CHECK(round_f16(once) == once);
    }
  }
  // Tiny magnitudes exercise the subnormal path.
  for (int i = 0; i < 5000; ++i) {
    const float x = static_cast<float>(rng.next_uniform(-1e-4, 1e-4));
    const float once = round_f16(x);
    CHECK(round_f16(once) == once);
  }
}

TEST_CASE("cast records identity gradient and rounds values") {
  Tensor t = Tensor::from_buffer({3}, {1.0, 2049.0, 65520.0}, DType::F32);
  Tensor h = cast(t, DType::F16E);
  CHECK(h.at(0) == 1.0);
  CHECK(h.at(1) == 2048.0);
  CHECK(std::isinf(h.at(2)));
  Tensor back = cast(h, DType::F32);
  CHECK(back.at(1) == 2048.0);  // F16E -> F32 exact
}

TEST_CASE("elementwise: relu, add, mul gradient") {
  Tensor r = relu(Tensor::from_buffer({3}, {-1.0, 0.0, 2.0}));
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 2.0);

  Tensor s = add(Tensor::from_buffer({2}, {1.0, 2.0}), Tensor::from_buffer({2}, {3.0, 4.0}));
  CHECK(s.at(0) == 4.0);
  CHECK(s.at(1) == 6.0);

  CHECK_THROWS_AS(add(Tensor::from_buffer({2}, {1, 2}), Tensor::from_buffer({3}, {1, 2, 3})),
                  SizeError);

  // d(a*b)/da with upstream 1.
  Tensor a = Tensor::param({1}, {2.0});
  Tensor b = Tensor::param({1}, {3.0});
  {
    Tape tape;
    Tensor p = reduce_mean(mul(a, b));
    backward(p);
  }
  CHECK(a.grad()[0] == doctest::Approx(3.0));
  CHECK(b.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("concat_channels shapes and backward split") {
  Tensor a = Tensor::full({1, 2, 4, 4}, 1.0);
  Tensor b = Tensor::full({1, 3, 4, 4}, 2.0);
  Tensor c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 5, 4, 4});
  CHECK(c.at(0) == 1.0);
  CHECK(c.at(2 * 16) == 2.0);

  Tensor empty = Tensor::zeros({1, 0, 4, 4});
  Tensor same = concat_channels(a, empty);
  CHECK(same.shape() == Shape{1, 2, 4, 4});

  CHECK_THROWS_AS(concat_channels(a, Tensor::full({1, 1, 2, 2}, 0.0)), SizeError);

  Tensor pa = Tensor::param({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor pb = Tensor::param({1, 1, 2, 2}, {5, 6, 7, 8});
  {
    Tape tape;
    backward(reduce_mean(concat_channels(pa, pb)));
  }
  for (int i = 0; i < 4; ++i) {
    CHECK(pa.grad()[static_cast<std::size_t>(i)] == doctest::Approx(0.125));
    CHECK(pb.grad()[static_cast<std::size_t>(i)] == doctest::Approx(0.125));
  }
}

TEST_CASE("reduce_mean value and backward share") {
  CHECK(reduce_mean(Tensor::from_buffer({3}, {1, 2, 3})).at(0) == doctest::Approx(2.0));
  CHECK(reduce_mean(Tensor::full({5}, 7.5)).at(0) == doctest::Approx(7.5));
  CHECK_THROWS_AS(reduce_mean(Tensor::zeros({0})), DomainError);

  Tensor p = Tensor::param({4}, {1, 2, 3, 4});
  {
    Tape tape;
    backward(reduce_mean(p));
  }
  for (int i = 0; i < 4; ++i) CHECK(p.grad()[static_cast<std::size_t>(i)] == doctest::Approx(0.25));
}

TEST_CASE("backward: contract checks, accumulation, tape visits") {
  Tensor w = Tensor::param({2}, {1.0, -1.0});

  {
    Tape tape;
    Tensor loss = reduce_mean(relu(w));
    backward(loss);
    CHECK(tape.last_backward_visits() == tape.size());
  }
  CHECK(w.grad()[0] == doctest::Approx(0.5));
  CHECK(w.grad()[1] == doctest::Approx(0.0));

  // Grads accumulate across backward calls until zeroed.
  {
    Tape tape;
    backward(reduce_mean(relu(w)));
    backward(reduce_mean(relu(w)));
  }
  CHECK(w.grad()[0] == doctest::Approx(1.5));  // 0.5 + 0.5 + 0.5
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);

  // Non-scalar loss and off-tape loss are contract errors.
  {
    Tape tape;
    Tensor v = relu(w);
    CHECK_THROWS_AS(backward(v), ContractError);
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);
  }
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);  // no tape at all
}

TEST_CASE("backward seed scales gradients linearly") {
  Tensor w = Tensor::param({2}, {3.0, -2.0});
  {
    Tape tape;
    backward(reduce_mean(mul(w, w)), 1.0);
  }
  const double g0 = w.grad()[0];
  w.zero_grad();
  {
    Tape tape;
    backward(reduce_mean(mul(w, w)), 2.0);
  }
  CHECK(w.grad()[0] == doctest::Approx(2.0 * g0));
}

TEST_CASE("finite_diff_check: quadratic, l1, composed graph") {
  // Sum of squares: essentially exact.
  auto sumsq = [](const Tensor& x) { return reduce_mean(mul(x, x)); };
  Tensor x = Tensor::from_buffer({3}, {3.0, -1.5, 0.75}, DType::F64);
  CHECK(finite_diff_check(sumsq, x, 1e-5) < 1e-8);

  // |x - c| away from kinks.
  Tensor c = Tensor::from_buffer({3}, {0.2, -0.4, 1.1}, DType::F64);
  auto l1ish = [&](const Tensor& t) { return reduce_mean(relu(sub(t, c))); };
  CHECK(finite_diff_check(l1ish, x, 1e-5) < 1e-4);

  auto composed = [&](const Tensor& t) {
    return reduce_mean(mul(relu(add(t, c)), sub(t, c)));
  };
  CHECK(finite_diff_check(composed, x, 1e-5) < 1e-4);
}

TEST_CASE("deterministic rng streams") {
  CounterRng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  CounterRng c = CounterRng(7).split("x");
  CounterRng d = CounterRng(7).split("y");
  CHECK(c.next_u64() != d.next_u64());

  // Normal draws have roughly the right moments.
  CounterRng n(11);
  double sum = 0.0, sumsq = 0.0;
  const int count = 200000;
  for (int i = 0; i < count; ++i) {
    const double z = n.next_normal();
    sum += z;
    sumsq += z * z;
  }
  const double mean = sum / count;
  const double var = sumsq / count - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}
