// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/analysis/auc.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include "anchorlab/harness/csv.hpp"
#include "anchorlab/parallel.hpp"

namespace anchorlab {

double auc_roc(std::span<const double> scores, const std::vector<bool>& positives) {
  if (scores.size() != positives.size()) throw std::invalid_argument("auc_roc: score/label length mismatch");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc_roc: needs at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum of positives; average ranks of a tie group are
  // half-integers, so doubling keeps everything integral.
  std::size_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t twice_avg_rank = (i + 1) + j;  // ranks are 1-based: (i+1 + j) / 2
    for (std::size_t k = i; k < j; ++k) {
      if (positives[order[k]]) twice_rank_sum += twice_avg_rank;
    }
    i = j;
  }
  const std::size_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double macro_ovr_auc(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels) {
  if (scores.size() != labels.size() || scores.empty()) throw std::invalid_argument("macro_ovr_auc: bad input sizes");
  const std::set<std::size_t> present(labels.begin(), labels.end());
  if (present.size() < 2) throw std::invalid_argument("macro_ovr_auc: every sample has the same label, AUC is undefined");
  double total = 0.0;
  for (std::size_t c : present) {
    std::vector<double> s(scores.size());
    std::vector<bool> pos(scores.size());
    for (std::size_t n = 0; n < scores.size(); ++n) {
      if (c >= scores[n].size()) throw std::out_of_range("macro_ovr_auc: label outside the score columns");
      s[n] = scores[n][c];
      pos[n] = labels[n] == c;
    }
    total += auc_roc(s, pos);
  }
  return total / static_cast<double>(present.size());
}

std::vector<double> accumulate_r(const std::vector<double>& aucs) {
  if (aucs.empty()) throw std::invalid_argument("accumulate_r: empty curve");
  std::vector<double> partial(aucs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < aucs.size(); ++i) {
    acc += aucs[i] - 0.5;
    partial[i] = acc;
  }
  if (acc == 0.0) throw std::domain_error("accumulate_r: sum of (auc - 0.5) over layers is zero");
  for (auto& v : partial) v /= acc;
  return partial;
}

AucCurve auc_curve_from_scores(const std::vector<std::vector<std::vector<double>>>& scores,
                               const std::vector<std::size_t>& labels) {
  AucCurve c;
  for (const auto& layer : scores) c.auc.push_back(macro_ovr_auc(layer, labels));
  c.r = accumulate_r(c.auc);
  return c;
}

template <typename T>
std::vector<std::vector<double>> anchor_attention_scores(const AttentionTrace<T>& trace, const IclPrompt& prompt) {
  const auto row = static_cast<std::size_t>(
      std::find(trace.query_positions.begin(), trace.query_positions.end(), prompt.target) - trace.query_positions.begin());
  if (row == trace.query_positions.size()) throw std::out_of_range("anchor scores: target not in the trace");
  std::vector<std::vector<double>> out(trace.n_layers, std::vector<double>(prompt.n_classes(), 0.0));
  for (std::size_t l = 0; l < trace.n_layers; ++l) {
    for (std::size_t h = 0; h < trace.n_heads; ++h) {
      const auto& a = trace.at(l, h);
      for (const auto& anc : prompt.anchors) out[l][anc.cls] += static_cast<double>(a.at(row, anc.position));
    }
  }
  return out;
}

template <typename T>
AucCurve layer_auc(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts) {
  if (prompts.empty()) throw std::invalid_argument("layer_auc: no prompts");
  const std::size_t n_layers = w.config.n_layers;
  std::vector<std::vector<std::vector<double>>> per_prompt(prompts.size());
  std::vector<std::size_t> predicted(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t k) {
    ForwardOptions opts;
    opts.capture.attention = true;
    const auto res = forward<T>(w, prompts[k].tokens, {}, opts);
    predicted[k] = predict_label(res.logits, prompts[k].target, prompts[k].label_ids);
    per_prompt[k] = anchor_attention_scores(res.trace, prompts[k]);
  });
  if (std::adjacent_find(predicted.begin(), predicted.end(), std::not_equal_to<>()) == predicted.end()) {
    throw std::invalid_argument("layer_auc: every prompt is predicted as the same class, AUC is undefined");
  }
  std::vector<std::vector<std::vector<double>>> scores(n_layers, std::vector<std::vector<double>>(prompts.size()));
  for (std::size_t k = 0; k < prompts.size(); ++k) {
    for (std::size_t l = 0; l < n_layers; ++l) scores[l][k] = per_prompt[k][l];
  }
  return auc_curve_from_scores(scores, predicted);
}

std::string auc_csv(const AucCurve& curve) {
  CsvWriter csv({"layer", "aucroc", "r"});
  for (std::size_t l = 0; l < curve.auc.size(); ++l) {
    csv.row({std::to_string(l), csv_number(curve.auc[l]), csv_number(curve.r[l])});
  }
  return csv.str();
}

template std::vector<std::vector<double>> anchor_attention_scores(const AttentionTrace<float>&, const IclPrompt&);
template std::vector<std::vector<double>> anchor_attention_scores(const AttentionTrace<double>&, const IclPrompt&);
template AucCurve layer_auc(const ModelWeights<float>&, const std::vector<IclPrompt>&);
template AucCurve layer_auc(const ModelWeights<double>&, const std::vector<IclPrompt>&);

}  // namespace anchorlab
