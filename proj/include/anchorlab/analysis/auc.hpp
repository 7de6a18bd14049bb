// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "anchorlab/model/transformer.hpp"

namespace anchorlab {

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U over average ranks).
double auc_roc(std::span<const double> scores, const std::vector<bool>& positives);

/// Macro one-vs-rest AUC. scores[n][c] is the score of class c for sample n;
/// classes absent from `labels` are skipped. Needs >= 2 distinct labels.
double macro_ovr_auc(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels);

/// r_l = sum_{i<=l} (auc_i - 0.5) / sum_{i<=N} (auc_i - 0.5).
std::vector<double> accumulate_r(const std::vector<double>& aucs);

struct AucCurve {
  std::vector<double> auc;
  std::vector<double> r;
  std::size_t n_layers() const noexcept { return auc.size(); }
};

/// scores[l][n][c]: per-layer class scores of each sample, against the
/// reference labels.
AucCurve auc_curve_from_scores(const std::vector<std::vector<std::vector<double>>>& scores,
                               const std::vector<std::size_t>& labels);

/// Per-layer class scores for one prompt: head-summed attention from the
/// target to the anchors of each class (summed over a class's anchors).
template <typename T>
std::vector<std::vector<double>> anchor_attention_scores(const AttentionTrace<T>& trace, const IclPrompt& prompt);

/// Layer-wise AUC of target-to-anchor attention against the model's own
/// predicted labels, with the accumulated share r_l.
template <typename T>
AucCurve layer_auc(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts);

/// Columns: layer, aucroc, r.
std::string auc_csv(const AucCurve& curve);

}  // namespace anchorlab
