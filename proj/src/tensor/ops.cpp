// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace anchorlab::ops {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;

template <typename T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const auto* t : inputs) {
    if (!t->tracked()) continue;
    if (tape != nullptr && tape != t->tape()) throw TapeError("op inputs are recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

template <typename T>
Tape<T>* tape_of(const std::vector<Tensor<T>>& inputs) {
  Tape<T>* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.tracked()) continue;
    if (tape != nullptr && tape != t.tape()) throw TapeError("op inputs are recorded on different tapes");
    tape = t.tape();
  }
  return tape;
}

template <typename T>
std::vector<NodeId> tracked_nodes(std::initializer_list<const Tensor<T>*> inputs) {
  std::vector<NodeId> out;
  for (const auto* t : inputs) {
    if (t->tracked()) out.push_back(t->node());
  }
  return out;
}

void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " + shape_str(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

Mask causal_mask(std::size_t n) {
  Mask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.allowed[i * n + j] = 1;
  }
  return m;
}

Mask position_mask(const std::vector<std::size_t>& query_pos, const std::vector<std::size_t>& key_pos) {
  Mask m{query_pos.size(), key_pos.size(), std::vector<std::uint8_t>(query_pos.size() * key_pos.size(), 0)};
  for (std::size_t i = 0; i < query_pos.size(); ++i) {
    for (std::size_t j = 0; j < key_pos.size(); ++j) {
      m.allowed[i * key_pos.size() + j] = key_pos[j] <= query_pos[i] ? 1 : 0;
    }
  }
  return m;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1);
  const std::size_t m = a.numel() / k;
  std::vector<T> out(m * n);
  MMap<T>(out.data(), m, n).noalias() = CMap<T>(a.raw(), m, k) * CMap<T>(b.raw(), k, n);
  Shape shape = a.shape();
  shape.back() = n;
  Tensor<T> result(shape, std::move(out));
  auto* tape = tape_of<T>({&a, &b});
  if (!tape) return result;
  return tape->record(result, tracked_nodes<T>({&a, &b}), [a, b, m, k, n](std::span<const T> g, Tape<T>& t) {
    CMap<T> gm(g.data(), m, n);
    if (a.tracked()) {
      MMap<T>(t.grad(a.node()).data(), m, k).noalias() += gm * CMap<T>(b.raw(), k, n).transpose();
    }
    if (b.tracked()) {
      MMap<T>(t.grad(b.node()).data(), k, n).noalias() += CMap<T>(a.raw(), m, k).transpose() * gm;
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_nt");
  require_rank(b.shape(), 2, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_str(a.shape()) + " by transpose of " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n);
  MMap<T>(out.data(), m, n).noalias() = CMap<T>(a.raw(), m, k) * CMap<T>(b.raw(), n, k).transpose();
  Tensor<T> result({m, n}, std::move(out));
  auto* tape = tape_of<T>({&a, &b});
  if (!tape) return result;
  return tape->record(result, tracked_nodes<T>({&a, &b}), [a, b, m, k, n](std::span<const T> g, Tape<T>& t) {
    CMap<T> gm(g.data(), m, n);
    if (a.tracked()) MMap<T>(t.grad(a.node()).data(), m, k).noalias() += gm * CMap<T>(b.raw(), n, k);
    if (b.tracked()) {
      MMap<T>(t.grad(b.node()).data(), n, k).noalias() += gm.transpose() * CMap<T>(a.raw(), m, k);
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Tensor<T> result(a.shape(), std::move(out));
  auto* tape = tape_of<T>({&a, &b});
  if (!tape) return result;
  return tape->record(result, tracked_nodes<T>({&a, &b}), [a, b](std::span<const T> g, Tape<T>& t) {
    for (const auto* p : {&a, &b}) {
      if (!p->tracked()) continue;
      auto dst = t.grad(p->node());
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  if (bias.rank() != 1 || a.rank() < 1 || a.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: cannot broadcast " + shape_str(bias.shape()) + " onto " + shape_str(a.shape()));
  }
  const std::size_t c = bias.dim(0), r = a.numel() / c;
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.at(i * c + j) + bias.at(j);
  }
  Tensor<T> result(a.shape(), std::move(out));
  auto* tape = tape_of<T>({&a, &bias});
  if (!tape) return result;
  return tape->record(result, tracked_nodes<T>({&a, &bias}), [a, bias, r, c](std::span<const T> g, Tape<T>& t) {
    if (a.tracked()) {
      auto dst = t.grad(a.node());
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (bias.tracked()) {
      auto dst = t.grad(bias.node());
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) dst[j] += g[i * c + j];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Tensor<T> result(a.shape(), std::move(out));
  auto* tape = tape_of<T>({&a, &b});
  if (!tape) return result;
  return tape->record(result, tracked_nodes<T>({&a, &b}), [a, b](std::span<const T> g, Tape<T>& t) {
    if (a.tracked()) {
      auto dst = t.grad(a.node());
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * b.at(i);
    }
    if (b.tracked()) {
      auto dst = t.grad(b.node());
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * a.at(i);
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  Tensor<T> result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, factor](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (auto v : a.data()) acc += v;
  auto result = Tensor<T>::scalar(acc);
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (auto& d : dst) d += g[0];
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.at(i));
  Tensor<T> result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, result](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * result.at(i);
  });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a.at(i), lo, hi);
  Tensor<T> result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, lo, hi](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (a.at(i) > lo && a.at(i) < hi) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T c = std::sqrt(T(2) / T(3.14159265358979323846));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.at(i);
    out[i] = T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
  }
  Tensor<T> result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, c](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = a.at(i);
      const T th = std::tanh(c * (x + T(0.044715) * x * x * x));
      const T dth = (T(1) - th * th) * c * (T(1) + T(3) * T(0.044715) * x * x);
      dst[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * dth);
    }
  });
}

namespace {

template <typename T>
Tensor<T> softmax_impl(const Tensor<T>& a, const Mask* mask) {
  if (a.rank() < 2) throw DimensionError("softmax_rows: expected a 2-D or batched 2-D tensor, got " + shape_str(a.shape()));
  const std::size_t c = a.shape().back();
  const std::size_t r = a.dim(a.rank() - 2);
  const std::size_t rows_total = a.numel() / c;
  if (mask && (mask->rows != r || mask->cols != c)) {
    throw DimensionError("softmax_rows: mask " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                         " does not match " + shape_str(a.shape()));
  }
  std::vector<T> out(a.numel(), T(0));
  for (std::size_t row = 0; row < rows_total; ++row) {
    const std::size_t mr = row % r;
    const T* src = a.raw() + row * c;
    T* dst = out.data() + row * c;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask && !(*mask)(mr, j)) continue;
      any = true;
      mx = std::max(mx, src[j]);
    }
    if (!any) throw std::domain_error("softmax_rows: row " + std::to_string(row) + " has every entry masked");
    T denom = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask && !(*mask)(mr, j)) continue;
      dst[j] = std::exp(src[j] - mx);
      denom += dst[j];
    }
    for (std::size_t j = 0; j < c; ++j) dst[j] /= denom;
  }
  Tensor<T> result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, result, rows_total, c](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t row = 0; row < rows_total; ++row) {
      const T* y = result.raw() + row * c;
      const T* gy = g.data() + row * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < c; ++j) dst[row * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  return softmax_impl(a, nullptr);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a, const Mask& mask) {
  return softmax_impl(a, &mask);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_rank(x.shape(), 2, "layer_norm");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c}) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match width " + std::to_string(c));
  }
  std::vector<T> out(r * c), xhat(r * c), rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.raw() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mean) * rstd[i];
      out[i * c + j] = xhat[i * c + j] * gain.at(j) + bias.at(j);
    }
  }
  Tensor<T> result(x.shape(), std::move(out));
  auto* tape = tape_of<T>({&x, &gain, &bias});
  if (!tape) return result;
  return tape->record(
      result, tracked_nodes<T>({&x, &gain, &bias}),
      [x, gain, bias, r, c, xhat = std::move(xhat), rstd = std::move(rstd)](std::span<const T> g, Tape<T>& t) {
        if (gain.tracked()) {
          auto dg = t.grad(gain.node());
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) dg[j] += g[i * c + j] * xhat[i * c + j];
          }
        }
        if (bias.tracked()) {
          auto db = t.grad(bias.node());
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
          }
        }
        if (x.tracked()) {
          auto dx = t.grad(x.node());
          for (std::size_t i = 0; i < r; ++i) {
            T mean_dy = 0, mean_dy_xhat = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T dy = g[i * c + j] * gain.at(j);
              mean_dy += dy;
              mean_dy_xhat += dy * xhat[i * c + j];
            }
            mean_dy /= T(c);
            mean_dy_xhat /= T(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T dy = g[i * c + j] * gain.at(j);
              dx[i * c + j] += rstd[i] * (dy - mean_dy - xhat[i * c + j] * mean_dy_xhat);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  require_rank(table.shape(), 2, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " out of range for table " +
                           shape_str(table.shape()));
    }
    std::copy_n(table.raw() + ids[i] * d, d, out.data() + i * d);
  }
  Tensor<T> result({ids.size(), d}, std::move(out));
  if (!table.tracked()) return result;
  return table.tape()->record(result, {table.node()}, [table, ids, d](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(table.node());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) dst[ids[i] * d + j] += g[i * d + j];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  Tensor<T> result(std::move(shape), std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename T>
Tensor<T> rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_rank(a.shape(), 2, "rows");
  if (begin >= end || end > a.dim(0)) {
    throw DimensionError("rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(a.shape()));
  }
  const std::size_t c = a.dim(1);
  std::vector<T> out(a.raw() + begin * c, a.raw() + end * c);
  Tensor<T> result({end - begin, c}, std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, begin, c](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < g.size(); ++i) dst[begin * c + i] += g[i];
  });
}

template <typename T>
Tensor<T> cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_rank(a.shape(), 2, "cols");
  if (begin >= end || end > a.dim(1)) {
    throw DimensionError("cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1), w = end - begin;
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(a.raw() + i * c + begin, w, out.data() + i * w);
  Tensor<T> result({r, w}, std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, begin, r, c, w](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) dst[i * c + begin + j] += g[i * w + j];
    }
  });
}

template <typename T>
Tensor<T> pick_rows(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
  require_rank(a.shape(), 2, "pick_rows");
  if (indices.empty()) throw DimensionError("pick_rows: empty index list");
  const std::size_t c = a.dim(1);
  std::vector<T> out(indices.size() * c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.dim(0)) {
      throw DimensionError("pick_rows: row " + std::to_string(indices[i]) + " out of range for " + shape_str(a.shape()));
    }
    std::copy_n(a.raw() + indices[i] * c, c, out.data() + i * c);
  }
  Tensor<T> result({indices.size(), c}, std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, indices, c](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) dst[indices[i] * c + j] += g[i * c + j];
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().shape().back();
  std::size_t r = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_rows");
    if (p.dim(1) != c) throw DimensionError("concat_rows: width mismatch " + shape_str(p.shape()));
    r += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor<T> result({r, c}, std::move(out));
  auto* tape = tape_of(parts);
  if (!tape) return result;
  std::vector<NodeId> parents;
  for (const auto& p : parts) {
    if (p.tracked()) parents.push_back(p.node());
  }
  return tape->record(result, std::move(parents), [parts](std::span<const T> g, Tape<T>& t) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (p.tracked()) {
        auto dst = t.grad(p.node());
        for (std::size_t i = 0; i < p.numel(); ++i) dst[i] += g[offset + i];
      }
      offset += p.numel();
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().dim(0);
  std::size_t c = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_cols");
    if (p.dim(0) != r) throw DimensionError("concat_cols: height mismatch " + shape_str(p.shape()));
    c += p.dim(1);
  }
  std::vector<T> out(r * c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < r; ++i) std::copy_n(p.raw() + i * w, w, out.data() + i * c + offset);
    offset += w;
  }
  Tensor<T> result({r, c}, std::move(out));
  auto* tape = tape_of(parts);
  if (!tape) return result;
  std::vector<NodeId> parents;
  for (const auto& p : parts) {
    if (p.tracked()) parents.push_back(p.node());
  }
  return tape->record(result, std::move(parents), [parts, r, c](std::span<const T> g, Tape<T>& t) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      if (p.tracked()) {
        auto dst = t.grad(p.node());
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < w; ++j) dst[i * w + j] += g[i * c + offset + j];
        }
      }
      offset += w;
    }
  });
}

template <typename T>
Tensor<T> take(const Tensor<T>& a, const std::vector<std::size_t>& flat) {
  if (flat.empty()) throw DimensionError("take: empty index list");
  std::vector<T> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i] >= a.numel()) {
      throw DimensionError("take: offset " + std::to_string(flat[i]) + " out of range for " + shape_str(a.shape()));
    }
    out[i] = a.at(flat[i]);
  }
  Tensor<T> result({flat.size()}, std::move(out));
  if (!a.tracked()) return result;
  return a.tape()->record(result, {a.node()}, [a, flat](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(a.node());
    for (std::size_t i = 0; i < flat.size(); ++i) dst[flat[i]] += g[i];
  });
}

template <typename T>
Tensor<T> scale_entries(const Tensor<T>& a, const std::vector<ScaledEntry>& entries, const Tensor<T>& factors) {
  require_rank(a.shape(), 2, "scale_entries");
  require_rank(factors.shape(), 1, "scale_entries");
  const std::size_t c = a.dim(1);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (const auto& e : entries) {
    if (e.row >= a.dim(0) || e.col >= c || e.slot >= factors.dim(0)) {
      throw DimensionError("scale_entries: entry (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                           ", slot " + std::to_string(e.slot) + ") out of range");
    }
    out[e.row * c + e.col] *= factors.at(e.slot);
  }
  Tensor<T> result(a.shape(), std::move(out));
  auto* tape = tape_of<T>({&a, &factors});
  if (!tape) return result;
  return tape->record(result, tracked_nodes<T>({&a, &factors}), [a, entries, factors, c](std::span<const T> g, Tape<T>& t) {
    if (a.tracked()) {
      std::vector<T> local(g.begin(), g.end());
      for (const auto& e : entries) local[e.row * c + e.col] *= factors.at(e.slot);
      auto dst = t.grad(a.node());
      for (std::size_t i = 0; i < local.size(); ++i) dst[i] += local[i];
    }
    if (factors.tracked()) {
      auto dst = t.grad(factors.node());
      for (const auto& e : entries) dst[e.slot] += g[e.row * c + e.col] * a.at(e.row * c + e.col);
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t target) {
  require_rank(logits.shape(), 1, "cross_entropy");
  const std::size_t n = logits.dim(0);
  if (target >= n) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " out of range for " +
                            std::to_string(n) + " classes");
  }
  const auto top = std::max_element(logits.data().begin(), logits.data().end());
  const T mx = *top;
  const auto top_idx = static_cast<std::size_t>(top - logits.data().begin());
  T rest = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i != top_idx) rest += std::exp(logits.at(i) - mx);
  }
  // log1p keeps full precision when the target dominates.
  const T tail = std::log1p(rest);
  const T lse = mx + tail;
  auto result = Tensor<T>::scalar((mx - logits.at(target)) + tail);
  if (!logits.tracked()) return result;
  return logits.tape()->record(result, {logits.node()}, [logits, target, lse, n](std::span<const T> g, Tape<T>& t) {
    auto dst = t.grad(logits.node());
    for (std::size_t i = 0; i < n; ++i) {
      const T p = std::exp(logits.at(i) - lse);
      dst[i] += g[0] * (p - (i == target ? T(1) : T(0)));
    }
  });
}

template <typename T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<std::size_t>& row_ids,
                             const std::vector<std::size_t>& targets) {
  require_rank(logits.shape(), 2, "cross_entropy_rows");
  if (row_ids.empty() || row_ids.size() != targets.size()) {
    throw DimensionError("cross_entropy_rows: need matching nonempty row and target lists");
  }
  const std::size_t v = logits.dim(1);
  std::vector<T> lse(row_ids.size());
  T total = 0;
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    if (row_ids[i] >= logits.dim(0) || targets[i] >= v) {
      throw std::out_of_range("cross_entropy_rows: row/target out of range");
    }
    const T* row = logits.raw() + row_ids[i] * v;
    const T mx = *std::max_element(row, row + v);
    T denom = 0;
    for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
    lse[i] = mx + std::log(denom);
    total += lse[i] - row[targets[i]];
  }
  const T inv = T(1) / T(row_ids.size());
  auto result = Tensor<T>::scalar(total * inv);
  if (!logits.tracked()) return result;
  return logits.tape()->record(result, {logits.node()},
                               [logits, row_ids, targets, lse, v, inv](std::span<const T> g, Tape<T>& t) {
                                 auto dst = t.grad(logits.node());
                                 for (std::size_t i = 0; i < row_ids.size(); ++i) {
                                   const T* row = logits.raw() + row_ids[i] * v;
                                   T* d = dst.data() + row_ids[i] * v;
                                   for (std::size_t j = 0; j < v; ++j) {
                                     const T p = std::exp(row[j] - lse[i]);
                                     d[j] += g[0] * inv * (p - (j == targets[i] ? T(1) : T(0)));
                                   }
                                 }
                               });
}

#define ANCHORLAB_INSTANTIATE_OPS(T)                                                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                                           \
  template Tensor<T> sum(const Tensor<T>&);                                                                \
  template Tensor<T> exp(const Tensor<T>&);                                                                \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                        \
  template Tensor<T> gelu(const Tensor<T>&);                                                               \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                       \
  template Tensor<T> softmax_rows(const Tensor<T>&, const Mask&);                                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> embedding(const Tensor<T>&, const std::vector<std::size_t>&);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
  template Tensor<T> rows(const Tensor<T>&, std::size_t, std::size_t);                                     \
  template Tensor<T> cols(const Tensor<T>&, std::size_t, std::size_t);                                     \
  template Tensor<T> pick_rows(const Tensor<T>&, const std::vector<std::size_t>&);                         \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                           \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                           \
  template Tensor<T> take(const Tensor<T>&, const std::vector<std::size_t>&);                              \
  template Tensor<T> scale_entries(const Tensor<T>&, const std::vector<ScaledEntry>&, const Tensor<T>&);   \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::size_t);                                         \
  template Tensor<T> cross_entropy_rows(const Tensor<T>&, const std::vector<std::size_t>&,                 \
                                        const std::vector<std::size_t>&);

ANCHORLAB_INSTANTIATE_OPS(float)
ANCHORLAB_INSTANTIATE_OPS(double)

#undef ANCHORLAB_INSTANTIATE_OPS

}  // namespace anchorlab::ops
