// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anchorlab/model/transformer.hpp"
#include "anchorlab/optim.hpp"

namespace anchorlab {

/// Learnable log-multipliers of target -> anchor attention, one per
/// (layer, head, class). All zeros is the identity.
struct BetaVector {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_classes = 0;
  /// Row-major (layer, head, class).
  std::vector<double> values;

  static BetaVector zeros(std::size_t n_layers, std::size_t n_heads, std::size_t n_classes);
  double& at(std::size_t l, std::size_t h, std::size_t c);
  double at(std::size_t l, std::size_t h, std::size_t c) const;
  void validate() const;

  std::string to_json() const;
  static BetaVector from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static BetaVector load(const std::filesystem::path& path);
};

/// Values are clipped to +-kBetaClip before exponentiation.
inline constexpr double kBetaClip = 20.0;

/// Adds an anchor-scale edit with multipliers exp(beta) to `plan`. Every class
/// of `beta` needs an anchor in the prompt.
template <typename T>
HookPlan<T> apply_beta(HookPlan<T> plan, const BetaVector& beta, const IclPrompt& prompt);

/// Same edit with a tracked beta tensor [N, H, C], for training.
template <typename T>
HookPlan<T> apply_beta_tracked(HookPlan<T> plan, const Tensor<T>& beta, const IclPrompt& prompt);

struct ReweightConfig {
  std::size_t epochs = 10;
  AdamConfig adam{.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0};
  std::uint64_t seed = 0;
};

struct ReweightResult {
  BetaVector beta;
  /// Mean loss per epoch.
  std::vector<double> epoch_loss;
};

/// Fits beta by Adam with batch size 1 over `train` (each a full prompt with
/// the fixed demonstrations and a labeled query). Model weights stay frozen.
/// The visiting order is reshuffled every epoch from `config.seed`.
template <typename T>
ReweightResult train_beta(const ModelWeights<T>& w, const std::vector<IclPrompt>& train, const ReweightConfig& config);

/// Label cross-entropy at the target with beta applied, and its gradient with
/// respect to beta.
template <typename T>
std::pair<double, BetaVector> beta_loss_and_grad(const ModelWeights<T>& w, const IclPrompt& prompt,
                                                 const BetaVector& beta);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
  std::vector<std::string> warnings;
};

/// Anchor-id argmax accuracy of the reweighted model.
template <typename T>
EvalResult eval_reweighted(const ModelWeights<T>& w, const BetaVector& beta, const std::vector<IclPrompt>& prompts);

/// Prompts sharing one fixed demonstration set and order, one per query.
std::vector<IclPrompt> fixed_demo_prompts(const Template& tpl, const Tokenizer& tok,
                                          const std::vector<LabeledExample>& demos,
                                          const std::vector<LabeledExample>& queries, std::uint64_t order_seed,
                                          std::size_t max_seq_len);

}  // namespace anchorlab
