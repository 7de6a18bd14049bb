// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"

using namespace anchorlab;
using namespace anchorlab::ops;
using testutil::fd_check;
using testutil::project;
using testutil::random_tensor;

namespace {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * n + j] += a.at(i, t) * b.at(t, j);
  return Tensor<double>({m, n}, out);
}

}  // namespace

TEST_CASE("matmul examples") {
  const auto id = Tensor<double>::matrix(2, 2, {1, 0, 0, 1});
  const auto b = Tensor<double>::matrix(2, 2, {2, 3, 4, 5});
  CHECK(matmul(id, b).data()[0] == 2);
  CHECK(matmul(id, b).data()[3] == 5);
  const auto r = matmul(Tensor<double>::matrix(1, 2, {1, 2}), Tensor<double>::matrix(2, 1, {3, 4}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r.data()[0] == 11);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  CounterRng rng(7, "matmul");
  const auto a = random_tensor({5, 7}, rng);
  const auto b = random_tensor({7, 3}, rng);
  const auto got = matmul(a, b);
  const auto want = naive_matmul(a, b);
  for (std::size_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
  const auto nt = matmul_nt(a, Tensor<double>({3, 7}, std::vector<double>(b.numel(), 0.5)));
  CHECK(nt.shape() == Shape{5, 3});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const auto a = Tensor<double>::zeros({2, 3});
  try {
    matmul(a, Tensor<double>::zeros({2, 3}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
}

TEST_CASE("softmax rows") {
  const auto u = softmax_rows(Tensor<double>::matrix(1, 3, {0, 0, 0}));
  for (auto v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Mask m{1, 3, {1, 0, 0}};
  const auto one = softmax_rows(Tensor<double>::matrix(1, 3, {4.2, 9, -3}), m);
  CHECK(one.data()[0] == 1.0);
  CHECK(one.data()[1] == 0.0);
  CHECK(one.data()[2] == 0.0);

  const auto s = softmax_rows(Tensor<double>::matrix(1, 3, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s.data()[i] - std::exp(i + 1.0) / z) < 1e-12);

  Mask dead{1, 2, {0, 0}};
  CHECK_THROWS_AS(softmax_rows(Tensor<double>::matrix(1, 2, {1, 2}), dead), std::domain_error);
}

TEST_CASE("softmax rows sum to one, masked entries exactly zero") {
  CounterRng rng(3, "softmax");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(9);
    const auto x64 = random_tensor({n, n}, rng, 3.0);
    std::vector<float> f(x64.data().begin(), x64.data().end());
    const Tensor<float> x32({n, n}, f);
    const auto mask = causal_mask(n);
    const auto a = softmax_rows(x64, mask);
    const auto b = softmax_rows(x32, mask);
    for (std::size_t r = 0; r < n; ++r) {
      double s64 = 0, s32 = 0;
      for (std::size_t c = 0; c < n; ++c) {
        s64 += a.at(r, c);
        s32 += b.at(r, c);
        if (c > r) {
          CHECK(a.at(r, c) == 0.0);
          CHECK(b.at(r, c) == 0.0f);
        }
      }
      CHECK(std::abs(s64 - 1) < 1e-12);
      CHECK(std::abs(s32 - 1) < 1e-6);
    }
  }
}

TEST_CASE("backward of a linear function") {
  Tape<double> tape;
  const auto w = tape.leaf(Tensor<double>::matrix(1, 3, {0.5, -1, 2}));
  const auto x = Tensor<double>::matrix(3, 1, {1, 2, 3});
  const auto loss = sum(matmul(w, x));
  const auto g = tape.backward(loss);
  const auto& gw = g.at(w.node());
  CHECK(gw.data()[0] == 1);
  CHECK(gw.data()[1] == 2);
  CHECK(gw.data()[2] == 3);
}

TEST_CASE("no double accumulation: d(x + x)/dx = 2") {
  Tape<double> tape;
  const auto x = tape.leaf(Tensor<double>::vector({1.5, -2}));
  const auto g = tape.backward(sum(add(x, x)));
  CHECK(g.at(x.node()).data()[0] == 2);
  CHECK(g.at(x.node()).data()[1] == 2);
}

TEST_CASE("backward errors") {
  Tape<double> tape, other;
  const auto x = tape.leaf(Tensor<double>::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), TapeError);
  const auto y = other.leaf(Tensor<double>::scalar(1));
  CHECK_THROWS_AS(tape.backward(y), TapeError);
  CHECK_THROWS_AS(tape.backward(sum(x), {NodeId{999}}), TapeError);
  CHECK_THROWS_AS(tape.backward(Tensor<double>::scalar(3)), TapeError);
}

TEST_CASE("retained softmax input matches the explicit Jacobian") {
  CounterRng rng(11, "jac");
  const std::size_t n = 5;
  const auto logits = random_tensor({1, n}, rng);
  const auto w = random_tensor({1, n}, rng);
  Tape<double> tape;
  const auto leaf = tape.leaf(random_tensor({1, n}, rng));
  const auto z = add(leaf, logits);  // intermediate node to retain
  const auto s = softmax_rows(z);
  const auto g = tape.backward(sum(mul(s, w)), {z.node()});
  const auto& gz = g.at(z.node());
  for (std::size_t i = 0; i < n; ++i) {
    double want = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double jac = s.data()[j] * ((i == j ? 1.0 : 0.0) - s.data()[i]);
      want += w.data()[j] * jac;
    }
    CHECK(std::abs(gz.data()[i] - want) < 1e-10);
  }
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(Tensor<double>::vector({0, 0}), 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double v = cross_entropy(Tensor<double>::vector({10, -10}), 0).item();
  CHECK(std::abs(v - std::log1p(std::exp(-20.0))) < 1e-20);
  CHECK(v == doctest::Approx(2.06e-9).epsilon(0.01));
  CHECK_THROWS_AS(cross_entropy(Tensor<double>::vector({1, 2}), 2), std::out_of_range);
  CounterRng rng(5, "ce");
  for (int s = 0; s < 10; ++s) {
    const auto x = random_tensor({6}, rng, 2.0);
    CHECK(fd_check([](const auto& in) { return cross_entropy(in[0], 4); }, {x}) < 1e-6);
  }
}

TEST_CASE("randomized finite-difference checks for every differentiable op") {
  using In = std::vector<Tensor<double>>;
  struct Case {
    const char* name;
    std::function<In(CounterRng&)> make;
    std::function<Tensor<double>(const In&)> f;
  };
  const Mask cm = causal_mask(4);
  const std::vector<ScaledEntry> entries = {{3, 1, 0}, {3, 2, 1}, {2, 0, 1}};
  const std::vector<Case> cases = {
      {"matmul", [](auto& r) { return In{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
       [](const In& x) { return project(matmul(x[0], x[1]), 1); }},
      {"matmul batched", [](auto& r) { return In{random_tensor({2, 3, 4}, r), random_tensor({4, 2}, r)}; },
       [](const In& x) { return project(matmul(x[0], x[1]), 2); }},
      {"matmul_nt", [](auto& r) { return In{random_tensor({3, 4}, r), random_tensor({5, 4}, r)}; },
       [](const In& x) { return project(matmul_nt(x[0], x[1]), 3); }},
      {"add", [](auto& r) { return In{random_tensor({3, 2}, r), random_tensor({3, 2}, r)}; },
       [](const In& x) { return project(add(x[0], x[1]), 4); }},
      {"add_bias", [](auto& r) { return In{random_tensor({3, 2}, r), random_tensor({2}, r)}; },
       [](const In& x) { return project(add_bias(x[0], x[1]), 5); }},
      {"mul", [](auto& r) { return In{random_tensor({3, 2}, r), random_tensor({3, 2}, r)}; },
       [](const In& x) { return project(mul(x[0], x[1]), 6); }},
      {"scale", [](auto& r) { return In{random_tensor({4}, r)}; },
       [](const In& x) { return project(scale(x[0], -1.7), 7); }},
      {"exp", [](auto& r) { return In{random_tensor({4}, r)}; }, [](const In& x) { return project(exp(x[0]), 8); }},
      {"clamp", [](auto& r) { return In{random_tensor({6}, r)}; },
       [](const In& x) { return project(clamp(x[0], -0.8, 0.9), 9); }},
      {"gelu", [](auto& r) { return In{random_tensor({6}, r, 2.0)}; }, [](const In& x) { return project(gelu(x[0]), 10); }},
      {"softmax", [](auto& r) { return In{random_tensor({3, 4}, r)}; },
       [](const In& x) { return project(softmax_rows(x[0]), 11); }},
      {"softmax masked", [](auto& r) { return In{random_tensor({4, 4}, r)}; },
       [cm](const In& x) { return project(softmax_rows(x[0], cm), 12); }},
      {"softmax batched", [](auto& r) { return In{random_tensor({2, 3, 4}, r)}; },
       [](const In& x) { return project(softmax_rows(x[0]), 13); }},
      {"layer_norm", [](auto& r) { return In{random_tensor({3, 5}, r), random_tensor({5}, r), random_tensor({5}, r)}; },
       [](const In& x) { return project(layer_norm(x[0], x[1], x[2], 1e-5), 14); }},
      {"embedding", [](auto& r) { return In{random_tensor({5, 3}, r)}; },
       [](const In& x) { return project(embedding(x[0], {4, 0, 4, 2}), 15); }},
      {"reshape", [](auto& r) { return In{random_tensor({2, 6}, r)}; },
       [](const In& x) { return project(reshape(x[0], {3, 4}), 16); }},
      {"rows", [](auto& r) { return In{random_tensor({5, 3}, r)}; }, [](const In& x) { return project(rows(x[0], 1, 4), 17); }},
      {"cols", [](auto& r) { return In{random_tensor({3, 5}, r)}; }, [](const In& x) { return project(cols(x[0], 2, 5), 18); }},
      {"pick_rows", [](auto& r) { return In{random_tensor({5, 3}, r)}; },
       [](const In& x) { return project(pick_rows(x[0], {4, 1, 1}), 19); }},
      {"concat_rows", [](auto& r) { return In{random_tensor({2, 3}, r), random_tensor({1, 3}, r)}; },
       [](const In& x) { return project(concat_rows(In{x[0], x[1]}), 20); }},
      {"concat_cols", [](auto& r) { return In{random_tensor({2, 3}, r), random_tensor({2, 1}, r)}; },
       [](const In& x) { return project(concat_cols(In{x[0], x[1]}), 21); }},
      {"take", [](auto& r) { return In{random_tensor({3, 3}, r)}; }, [](const In& x) { return project(take(x[0], {8, 0, 4}), 22); }},
      {"scale_entries", [](auto& r) { return In{random_tensor({4, 4}, r), random_tensor({2}, r)}; },
       [entries](const In& x) { return project(scale_entries(x[0], entries, x[1]), 23); }},
      {"cross_entropy_rows", [](auto& r) { return In{random_tensor({4, 5}, r)}; },
       [](const In& x) { return cross_entropy_rows(x[0], {0, 2, 3}, {4, 1, 1}); }},
      {"sum", [](auto& r) { return In{random_tensor({3, 2}, r)}; }, [](const In& x) { return sum(mul(x[0], x[0])); }},
  };
  for (const auto& c : cases) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      CounterRng rng(seed, c.name);
      worst = std::max(worst, fd_check(c.f, c.make(rng)));
    }
    INFO(c.name);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<double>({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor<double>({0, 2}, {}), DimensionError);
  Tape<double> tape;
  const auto a = tape.leaf(Tensor<double>::vector({1, 2}));
  const auto b = tape.leaf(Tensor<double>::vector({3, 4}));
  const auto c = add(a, b);
  CHECK(c.tracked());
  CHECK(c.node() > a.node());
  CHECK(c.node() > b.node());
  CHECK_FALSE(c.detach().tracked());
  Tape<double> other;
  const auto d = other.leaf(Tensor<double>::vector({1, 1}));
  CHECK_THROWS_AS(add(a, d), TapeError);
}
