// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "anchorlab/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the tape of its
// tracked inputs (all tracked inputs must share one tape) and is a plain
// computation otherwise. Broadcasting is limited to leading batch dimensions.
namespace anchorlab::ops {

/// Row-major boolean matrix: 1 where attention is allowed.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

/// Lower-triangular mask of a square sequence.
Mask causal_mask(std::size_t n);
/// Key j is visible from query i iff key_pos[j] <= query_pos[i].
Mask position_mask(const std::vector<std::size_t>& query_pos, const std::vector<std::size_t>& key_pos);

/// a: [..., M, K] (leading dims flattened), b: [K, N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a: [M, K], b: [N, K] -> a * b^T.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
/// a: [..., C] plus bias: [C].
template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
/// Gradient is passed only where lo < a < hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);
/// tanh-approximation GELU as used by GPT-2.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

/// Row-wise softmax over the last axis; `a` is 2-D or batched 2-D.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a);
/// Masked entries come out exactly 0. A row with no allowed entry is an error.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a, const Mask& mask);

/// x: [R, C]; normalizes each row, then gain * x + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

/// table: [V, D] -> [ids.size(), D].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Rows [begin, end) of a 2-D tensor.
template <typename T>
Tensor<T> rows(const Tensor<T>& a, std::size_t begin, std::size_t end);
/// Columns [begin, end) of a 2-D tensor.
template <typename T>
Tensor<T> cols(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> pick_rows(const Tensor<T>& a, const std::vector<std::size_t>& indices);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
/// 1-D tensor of the elements at the given flat offsets.
template <typename T>
Tensor<T> take(const Tensor<T>& a, const std::vector<std::size_t>& flat);

/// One rescaled entry of a 2-D tensor: out(row, col) = a(row, col) * factors[slot].
struct ScaledEntry {
  std::size_t row;
  std::size_t col;
  std::size_t slot;
};
/// All other entries pass through unchanged. No renormalization.
template <typename T>
Tensor<T> scale_entries(const Tensor<T>& a, const std::vector<ScaledEntry>& entries,
                        const Tensor<T>& factors);

/// -log softmax(logits)[target]; logits is a vector.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target);
/// Mean cross-entropy over selected rows of a [R, V] logit matrix.
template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<std::size_t>& rows,
                             const std::vector<std::size_t>& targets);

}  // namespace anchorlab::ops
