// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace anchorlab {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible for an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for misuse of the gradient tape (non-scalar loss, foreign handles).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <std::floating_point T>
class Tape;

/// Dense row-major array. The buffer is immutable once constructed, so copies
/// are cheap and tensors may be shared across threads. A tensor produced by a
/// recorded op carries a handle into the tape that produced it.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);
  static Tensor vector(std::vector<T> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_ ? data_->size() : 0; }
  std::size_t dim(std::size_t axis) const;
  bool empty() const noexcept { return numel() == 0; }

  std::span<const T> data() const noexcept {
    return data_ ? std::span<const T>(*data_) : std::span<const T>();
  }
  const T* raw() const noexcept { return data_ ? data_->data() : nullptr; }

  T item() const;
  T at(std::size_t i) const { return (*data_)[i]; }
  T at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_.back() + c]; }

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  NodeId node() const noexcept { return node_; }

  /// Same values, no tape handle.
  Tensor detach() const;

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  NodeId node_ = 0;
};

/// Append-only record of tracked operations for reverse-mode differentiation.
/// A tape is confined to one thread; independent runs use independent tapes.
template <std::floating_point T>
class Tape {
 public:
  /// Adds the incoming output gradient into the parents' gradient buffers.
  using BackwardFn = std::function<void(std::span<const T> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor<T> leaf(const Tensor<T>& value);

  /// Records the result of an op whose inputs include at least one tracked
  /// tensor on this tape.
  Tensor<T> record(Tensor<T> value, std::vector<NodeId> parents, BackwardFn backward);

  /// Reverse sweep from a scalar `loss`. Returns gradients for every leaf and
  /// for each handle in `retain`.
  std::map<NodeId, Tensor<T>> backward(const Tensor<T>& loss, const std::set<NodeId>& retain = {});

  /// Gradient accumulator of `node` during a backward sweep.
  std::span<T> grad(NodeId node);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool is_leaf(NodeId node) const { return node < nodes_.size() && nodes_[node].leaf; }

 private:
  struct Node {
    Shape shape;
    std::vector<NodeId> parents;
    BackwardFn backward;
    bool leaf = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace anchorlab
