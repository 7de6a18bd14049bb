// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anchorlab/corpus/prompt.hpp"
#include "anchorlab/corpus/tokenizer.hpp"

namespace anchorlab {

enum class TaskKind { kKeyedSentiment, kPatternTopic, kEmotionLexicon };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::kKeyedSentiment;
  std::size_t n_classes = 2;
  /// Number of content words (fillers plus planted cues).
  std::size_t vocab_size = 48;
  std::size_t n_train = 256;
  std::size_t n_test = 200;
  std::uint64_t seed = 0;
  /// Probability that an example of one of the last two classes carries a cue
  /// shared by both (0 keeps every class perfectly separable). Used to plant a
  /// confusable class pair.
  double shared_cue_rate = 0.0;
};

/// Synthetic classification task with planted cue words. The label is a
/// deterministic function of the cue words present (see `oracle_label`), so
/// the rule-based classifier is exact unless `shared_cue_rate` > 0.
struct SyntheticTask {
  TaskSpec spec;
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
  Template tpl;
  Tokenizer tokenizer;
  /// cues[c] = cue words of class c; shared_cues are ambiguous between the
  /// last two classes.
  std::vector<std::vector<std::string>> cues;
  std::vector<std::string> shared_cues;
  /// Extra label words that toy training may substitute for the template's.
  std::vector<std::string> label_pool;

  /// Planted-rule classifier; ambiguous shared cues resolve to the lower class.
  std::size_t oracle_label(const std::string& text) const;
};

SyntheticTask gen_synthetic_task(const TaskSpec& spec);

/// Demonstration templates of four standard text classification tasks.
Template sst2_template();
Template trec_template();
Template agnews_template();
Template emoc_template();

}  // namespace anchorlab
