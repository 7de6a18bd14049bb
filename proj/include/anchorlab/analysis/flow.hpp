// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "anchorlab/model/transformer.hpp"

namespace anchorlab {

/// Mean saliency of three groups of causal (row, column) pairs: into label
/// words from earlier tokens, from label words into the target, and all other
/// strictly lower-triangular pairs.
struct FlowTriple {
  double s_wp = 0.0;
  double s_pq = 0.0;
  double s_ww = 0.0;

  double total() const noexcept { return s_wp + s_pq + s_ww; }
  /// Shares of the total; all zero when the total is zero.
  FlowTriple normalized() const noexcept;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

/// The three pair groups of a T x T matrix, each in row-major order.
struct FlowIndexSets {
  std::vector<IndexPair> wp;
  std::vector<IndexPair> pq;
  std::vector<IndexPair> ww;
};

/// Errors when an anchor sits at position 0, anchors are not distinct, an
/// anchor is not before `target`, or `target` >= size.
FlowIndexSets flow_index_sets(std::size_t size, const std::vector<std::size_t>& anchors, std::size_t target);

template <typename T>
FlowTriple flow_metrics(const Tensor<T>& saliency, const std::vector<std::size_t>& anchors, std::size_t target);

struct FlowReport {
  std::size_t n_layers = 0;
  std::vector<FlowTriple> raw;
  std::vector<FlowTriple> normalized;
  std::map<std::string, std::string> meta;
};

/// Per-layer metrics averaged over prompts, then normalized per layer. The
/// saliency loss uses each prompt's gold query label.
template <typename T>
FlowReport flow_curve(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts);

/// Columns: layer, s_wp, s_pq, s_ww, s_wp_norm, s_pq_norm, s_ww_norm.
std::string flow_csv(const FlowReport& report);

}  // namespace anchorlab
