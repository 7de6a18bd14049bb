// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/analysis/flow.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "anchorlab/harness/csv.hpp"
#include "anchorlab/parallel.hpp"

namespace anchorlab {

FlowTriple FlowTriple::normalized() const noexcept {
  const double t = total();
  if (!(t > 0.0)) return {};
  return {s_wp / t, s_pq / t, s_ww / t};
}

FlowIndexSets flow_index_sets(std::size_t size, const std::vector<std::size_t>& anchors, std::size_t target) {
  if (target >= size) throw std::out_of_range("flow: target " + std::to_string(target) + " outside a matrix of size " + std::to_string(size));
  if (anchors.empty()) throw std::invalid_argument("flow: no label-word positions");
  const std::set<std::size_t> anchor_set(anchors.begin(), anchors.end());
  if (anchor_set.size() != anchors.size()) throw std::invalid_argument("flow: label-word positions are not distinct");
  if (*anchor_set.begin() == 0) {
    throw std::invalid_argument("flow: a label word at position 0 has no preceding tokens, so the mean into label words is undefined");
  }
  if (*anchor_set.rbegin() >= target) throw std::invalid_argument("flow: every label word must precede the target");

  FlowIndexSets sets;
  for (std::size_t i = 0; i < size; ++i) {
    const bool anchor_row = anchor_set.contains(i);
    for (std::size_t j = 0; j < i; ++j) {
      if (anchor_row) {
        sets.wp.emplace_back(i, j);
      } else if (i == target && anchor_set.contains(j)) {
        sets.pq.emplace_back(i, j);
      } else {
        sets.ww.emplace_back(i, j);
      }
    }
  }
  if (sets.ww.empty()) throw std::invalid_argument("flow: no pairs outside the label-word groups");
  return sets;
}

template <typename T>
FlowTriple flow_metrics(const Tensor<T>& saliency, const std::vector<std::size_t>& anchors, std::size_t target) {
  if (saliency.rank() != 2 || saliency.dim(0) != saliency.dim(1)) {
    throw DimensionError("flow: saliency must be square, got " + shape_str(saliency.shape()));
  }
  const auto sets = flow_index_sets(saliency.dim(0), anchors, target);
  auto mean = [&](const std::vector<IndexPair>& pairs) {
    double s = 0.0;
    for (const auto& [i, j] : pairs) s += static_cast<double>(saliency.at(i, j));
    return s / static_cast<double>(pairs.size());
  };
  return {mean(sets.wp), mean(sets.pq), mean(sets.ww)};
}

template <typename T>
FlowReport flow_curve(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts) {
  if (prompts.empty()) throw std::invalid_argument("flow_curve: no prompts");
  const std::size_t n_layers = w.config.n_layers;
  std::vector<std::vector<FlowTriple>> per_prompt(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t k) {
    const auto& p = prompts[k];
    if (!p.query_label) throw std::invalid_argument("flow_curve: prompt " + std::to_string(k) + " has no gold label");
    const auto sal = forward_with_saliency(w, p, *p.query_label);
    std::vector<std::size_t> anchors;
    for (const auto& a : p.anchors) anchors.push_back(a.position);
    for (const auto& m : sal) per_prompt[k].push_back(flow_metrics(m, anchors, p.target));
  });
  FlowReport r;
  r.n_layers = n_layers;
  r.raw.assign(n_layers, {});
  for (const auto& row : per_prompt) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      r.raw[l].s_wp += row[l].s_wp;
      r.raw[l].s_pq += row[l].s_pq;
      r.raw[l].s_ww += row[l].s_ww;
    }
  }
  const double n = static_cast<double>(prompts.size());
  for (auto& t : r.raw) {
    t.s_wp /= n;
    t.s_pq /= n;
    t.s_ww /= n;
    r.normalized.push_back(t.normalized());
  }
  r.meta["n_prompts"] = std::to_string(prompts.size());
  return r;
}

std::string flow_csv(const FlowReport& report) {
  CsvWriter csv({"layer", "s_wp", "s_pq", "s_ww", "s_wp_norm", "s_pq_norm", "s_ww_norm"});
  for (std::size_t l = 0; l < report.n_layers; ++l) {
    const auto& a = report.raw[l];
    const auto& b = report.normalized[l];
    csv.row({std::to_string(l), csv_number(a.s_wp), csv_number(a.s_pq), csv_number(a.s_ww), csv_number(b.s_wp),
             csv_number(b.s_pq), csv_number(b.s_ww)});
  }
  return csv.str();
}

template FlowTriple flow_metrics(const Tensor<float>&, const std::vector<std::size_t>&, std::size_t);
template FlowTriple flow_metrics(const Tensor<double>&, const std::vector<std::size_t>&, std::size_t);
template FlowReport flow_curve(const ModelWeights<float>&, const std::vector<IclPrompt>&);
template FlowReport flow_curve(const ModelWeights<double>&, const std::vector<IclPrompt>&);

}  // namespace anchorlab
