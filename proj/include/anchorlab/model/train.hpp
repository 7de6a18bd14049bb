// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anchorlab/corpus/synthetic.hpp"
#include "anchorlab/model/transformer.hpp"
#include "anchorlab/optim.hpp"

namespace anchorlab {

/// Training recipe for desk-scale in-context classifiers.
///
/// Every training sequence is a prompt of 1..max_shots demonstrations per
/// class followed by a query. With `permute_labels`, each sequence draws a
/// fresh injective class -> label-word map from the task's label pool, so the
/// label can only be read off the demonstrations. Loss is full-vocabulary
/// cross-entropy at the query target and at every label word whose class was
/// already shown earlier in the sequence. A `fixed_label_rate` share of the
/// sequences instead uses one fixed class -> word map drawn from pool words
/// outside the template's label words, with loss at every label word; these
/// teach class features without letting the template words be memorized.
/// The first `fixed_phase_steps` steps use fixed-mapping sequences only.
struct ToyRecipe {
  std::size_t steps = 15000;
  std::size_t batch = 8;
  std::size_t warmup = 50;
  std::size_t max_shots = 2;
  bool permute_labels = true;
  double fixed_label_rate = 0.3;
  std::size_t fixed_phase_steps = 600;
  double init_std = 0.02;
  AdamConfig adam{.lr = 2e-3, .beta1 = 0.9, .beta2 = 0.99, .eps = 1e-8, .weight_decay = 0.01};
  std::size_t eval_prompts = 200;
  std::uint64_t seed = 0;
};

/// GPT-2 style initialization: N(0, init_std) matrices, output projections
/// scaled by 1/sqrt(2 * n_layers), unit norm gains, zero biases.
template <typename T>
ModelWeights<T> init_weights(const ModelConfig& config, double init_std, std::uint64_t seed);

/// Accuracy of anchor-id argmax at the target over `prompts`.
template <typename T>
double prompt_accuracy(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts);

/// Evaluation prompts of a task: 1 demonstration per class with the
/// template's own label words, queries from the test split.
std::vector<IclPrompt> task_eval_prompts(const SyntheticTask& task, std::size_t n, std::size_t per_class,
                                         std::uint64_t seed, std::size_t max_seq_len);

struct ToyTrainLog {
  std::vector<double> loss;  ///< per step
  double final_loss = 0.0;   ///< mean over the last 10% of steps
  double eval_accuracy = 0.0;
};

/// Trains a model from scratch on `task`. `config.vocab_size` is taken from
/// the task tokenizer. Throws on a non-finite loss, naming the step.
template <typename T>
Checkpoint<T> train_toy(const SyntheticTask& task, ModelConfig config, const ToyRecipe& recipe,
                        ToyTrainLog* log = nullptr);

/// Task and recipe fields recorded in checkpoint meta, and the inverse.
std::map<std::string, std::string> task_meta(const TaskSpec& spec);
TaskSpec task_spec_from_meta(const std::map<std::string, std::string>& meta);

/// "%.9g" rendering used for numbers stored in string metadata.
std::string format_number(double v);

}  // namespace anchorlab
