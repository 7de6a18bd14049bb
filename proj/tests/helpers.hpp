// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "anchorlab/ops.hpp"
#include "anchorlab/rng.hpp"
#include "anchorlab/tensor.hpp"

namespace testutil {

using anchorlab::CounterRng;
using anchorlab::Shape;
using anchorlab::Tape;
using anchorlab::Tensor;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, CounterRng& rng, double scale = 1.0) {
  std::vector<T> v(anchorlab::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
  return Tensor<T>(std::move(shape), std::move(v));
}

/// Max over entries of |a - n| / max(|a|, |n|, floor).
inline double rel_error(double a, double n, double floor = 1e-2) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

template <typename T>
double max_rel_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-2) {
  if (a.shape() != b.shape()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, rel_error(static_cast<double>(a.data()[i]), static_cast<double>(b.data()[i]), floor));
  }
  return worst;
}

/// Compares tape gradients of f(inputs) with central finite differences of
/// step h for every input element. Returns the worst relative error.
inline double fd_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                       const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
  Tape<double> tape;
  std::vector<Tensor<double>> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  const auto loss = f(leaves);
  const auto grads = tape.backward(loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = grads.at(leaves[i].node());
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      auto shifted = [&](double delta) {
        auto args = inputs;
        std::vector<double> v(inputs[i].data().begin(), inputs[i].data().end());
        v[j] += delta;
        args[i] = Tensor<double>(inputs[i].shape(), std::move(v));
        return f(args).item();
      };
      const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
      worst = std::max(worst, rel_error(analytic.data()[j], numeric));
    }
  }
  return worst;
}

/// sum(out * weights) with fixed random weights, to turn any op into a scalar.
inline Tensor<double> project(const Tensor<double>& out, std::uint64_t seed) {
  CounterRng rng(seed, "projection");
  return anchorlab::ops::sum(anchorlab::ops::mul(out, random_tensor<double>(out.shape(), rng)));
}

}  // namespace testutil
