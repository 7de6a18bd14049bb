// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace anchorlab {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero dimension");
  }
  if (shape_numel(shape_) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " needs " +
                         std::to_string(shape_numel(shape_)) + " elements, got " +
                         std::to_string(data.size()));
  }
  data_ = std::make_shared<const std::vector<T>>(std::move(data));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <std::floating_point T>
Tensor<T> Tensor<T>::vector(std::vector<T> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

template <std::floating_point T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

template <std::floating_point T>
Tensor<T> Tensor<T>::detach() const {
  Tensor out = *this;
  out.tape_ = nullptr;
  out.node_ = 0;
  return out;
}

template <std::floating_point T>
Tensor<T> Tape<T>::leaf(const Tensor<T>& value) {
  if (value.tape_ != nullptr && value.tape_ != this) {
    throw TapeError("tensor already belongs to another tape");
  }
  Tensor<T> out = value;
  out.tape_ = this;
  out.node_ = nodes_.size();
  nodes_.push_back(Node{value.shape(), {}, {}, true});
  return out;
}

template <std::floating_point T>
Tensor<T> Tape<T>::record(Tensor<T> value, std::vector<NodeId> parents, BackwardFn backward) {
  for (auto p : parents) {
    if (p >= nodes_.size()) throw TapeError("parent handle " + std::to_string(p) + " is not on this tape");
  }
  value.tape_ = this;
  value.node_ = nodes_.size();
  nodes_.push_back(Node{value.shape(), std::move(parents), std::move(backward), false});
  return value;
}

template <std::floating_point T>
std::span<T> Tape<T>::grad(NodeId node) {
  auto& g = grads_.at(node);
  if (g.empty()) g.assign(shape_numel(nodes_[node].shape), T(0));
  return g;
}

template <std::floating_point T>
std::map<NodeId, Tensor<T>> Tape<T>::backward(const Tensor<T>& loss, const std::set<NodeId>& retain) {
  if (loss.tape_ != this) throw TapeError("loss is not on this tape");
  if (loss.numel() != 1) throw TapeError("loss must be scalar, got shape " + shape_str(loss.shape()));
  for (auto r : retain) {
    if (r >= nodes_.size()) throw TapeError("retained handle " + std::to_string(r) + " is not on this tape");
  }

  grads_.assign(nodes_.size(), {});
  grad(loss.node_)[0] = T(1);

  // Nodes are appended after their parents, so reverse index order is a valid
  // reverse topological order.
  for (NodeId i = loss.node_ + 1; i-- > 0;) {
    if (grads_[i].empty() || !nodes_[i].backward) continue;
    nodes_[i].backward(std::span<const T>(grads_[i]), *this);
  }

  std::map<NodeId, Tensor<T>> out;
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf && !retain.contains(i)) continue;
    if (nodes_[i].shape.empty() && grads_[i].empty()) {
      out.emplace(i, Tensor<T>::scalar(T(0)));
      continue;
    }
    std::vector<T> g = grads_[i].empty() ? std::vector<T>(shape_numel(nodes_[i].shape), T(0)) : grads_[i];
    out.emplace(i, Tensor<T>(nodes_[i].shape, std::move(g)));
  }
  grads_.clear();
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace anchorlab
