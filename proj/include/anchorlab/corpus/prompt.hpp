// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/corpus/tokenizer.hpp"

namespace anchorlab {

/// Demonstration template. `demo_pattern` holds one <S1> (input text) and one
/// <L> (label word) slot; `query_pattern` holds one <S> slot. Demonstration
/// blocks and the query block are joined with `separator`.
struct Template {
  std::string demo_pattern;
  std::string query_pattern;
  std::vector<std::string> label_words;
  std::string separator = "\n";

  std::size_t n_classes() const noexcept { return label_words.size(); }
  void validate() const;

  static Template load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct LabeledExample {
  std::string text;
  std::size_t label = 0;
};

/// Label-word position p_k inside a prompt and the class it names.
struct Anchor {
  std::size_t position = 0;
  std::size_t cls = 0;
};

struct IclPrompt {
  std::vector<TokenId> tokens;
  std::vector<Anchor> anchors;
  /// Template scaffolding inside the demonstration region (sorted).
  std::vector<std::size_t> format_positions;
  /// Demonstration input text positions (sorted).
  std::vector<std::size_t> content_positions;
  /// Anchor token id per class; predictions read the logits of these ids.
  std::vector<TokenId> label_ids;
  std::size_t target = 0;
  std::size_t demo_len = 0;
  std::size_t query_len = 0;
  /// Gold class of the query, when known.
  std::optional<std::size_t> query_label;

  std::size_t n_classes() const noexcept { return label_ids.size(); }
  std::size_t size() const noexcept { return tokens.size(); }
  /// Anchor positions of one class, in prompt order.
  std::vector<std::size_t> anchors_of(std::size_t cls) const;
  std::vector<TokenId> query_tokens() const;
  std::vector<TokenId> demo_tokens() const;
};

/// Anchor token id per class: the first sub-token of each label word as it is
/// tokenized in the <L> slot.
std::vector<TokenId> label_anchor_ids(const Template& tpl, const Tokenizer& tok);

/// Assembles demonstrations (shuffled by `order_seed`) and the query into a
/// prompt with exact anchor, scaffolding and target bookkeeping.
IclPrompt build_prompt(const Template& tpl, const Tokenizer& tok, std::vector<LabeledExample> demos,
                       const LabeledExample& query, std::uint64_t order_seed, std::size_t max_seq_len);

/// Builds `n` prompts: query i is queries[i % size], demonstrations are drawn
/// from `demo_pool` (`per_class` per class) and ordered with seeds derived from
/// (`seed`, i).
std::vector<IclPrompt> build_prompt_set(const Template& tpl, const Tokenizer& tok,
                                        const std::vector<LabeledExample>& demo_pool,
                                        const std::vector<LabeledExample>& queries, std::size_t n,
                                        std::size_t per_class, std::uint64_t seed, std::size_t max_seq_len);

/// Draws `per_class` demonstrations of every class from `pool` without
/// replacement. Classes absent from the pool are an error.
std::vector<LabeledExample> sample_demos(const std::vector<LabeledExample>& pool, std::size_t n_classes,
                                         std::size_t per_class, std::uint64_t seed);

/// One JSON record per line: {"text": ..., "label": int}.
std::vector<LabeledExample> load_labeled_file(const std::filesystem::path& path);
void save_labeled_file(const std::filesystem::path& path, const std::vector<LabeledExample>& examples);

}  // namespace anchorlab
