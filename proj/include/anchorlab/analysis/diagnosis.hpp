// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/model/transformer.hpp"

namespace anchorlab {

/// Principal variation of one head's target queries and the class keys
/// projected on it.
struct HeadKhat {
  /// [M, d_head], orthonormal rows.
  Eigen::MatrixXd directions;
  /// Standard deviations along `directions`, non-increasing.
  Eigen::VectorXd sigmas;
  /// [C, M]: sigma_m * v_m . k_c
  Eigen::MatrixXd features;
};

struct KhatFeatures {
  std::size_t layer = 0;
  std::size_t m = 0;
  std::vector<HeadKhat> heads;
  /// [C, heads * M]: per-head features concatenated.
  Eigen::MatrixXd features;
};

/// Top-`m` variance directions of `queries` ([T, d], population covariance)
/// applied to `keys` ([C, d]). `m` is clamped to d. Throws if T < m or if the
/// queries do not vary. Each direction's largest-magnitude component is
/// positive.
HeadKhat khat_from_vectors(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys, std::size_t m);

/// Query vectors at the target and mean key vectors over each class's anchor
/// positions at `layer`, per head, pooled over `prompts`.
template <typename T>
KhatFeatures khat(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts, std::size_t layer, std::size_t m = 10);

/// ||f_i - f_j|| / max_{s != t} ||f_s - f_t||, diagonal 1. Rows of
/// `features` are classes.
Eigen::MatrixXd predicted_confusion(const Eigen::MatrixXd& features);

struct ActualConfusion {
  Eigen::MatrixXd matrix;
  /// Pairs without samples of both classes (reported as 1).
  std::vector<std::pair<std::size_t, std::size_t>> undefined;
};

/// Pairwise AUC of p_i / (p_i + p_j) on the samples labeled i or j, from
/// per-sample class probabilities [n, C].
ActualConfusion actual_confusion_from_probs(const Eigen::MatrixXd& probs, const std::vector<std::size_t>& labels);

/// Class probabilities from the anchor-id logits at each prompt's target.
template <typename T>
ActualConfusion actual_confusion(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts);

/// Spearman correlation with average ranks for ties; nullopt for fewer than
/// two points or a constant input.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

struct ConfusionComparison {
  Eigen::MatrixXd predicted;
  Eigen::MatrixXd actual;
  /// Over off-diagonal upper-triangle pairs; nullopt when C = 2.
  std::optional<double> spearman;
  /// Off-diagonal argmin of each matrix.
  std::pair<std::size_t, std::size_t> most_confused_predicted;
  std::pair<std::size_t, std::size_t> most_confused_actual;
};

ConfusionComparison compare_confusions(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual);

inline const std::vector<std::size_t> kDefaultMSweep = {5, 10, 20, 50, 100, 200};

struct MSweepRow {
  std::size_t m_requested = 0;
  std::size_t m_used = 0;
  ConfusionComparison comparison;
};

template <typename T>
std::vector<MSweepRow> m_sweep(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts, std::size_t layer,
                               const Eigen::MatrixXd& actual, const std::vector<std::size_t>& ms = kDefaultMSweep);

/// Layer with the highest anchor AUC (ties: lowest layer).
template <typename T>
std::size_t auto_layer(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts);

/// Columns: row, then one per class.
std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names);

}  // namespace anchorlab
