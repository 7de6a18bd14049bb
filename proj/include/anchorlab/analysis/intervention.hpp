// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "anchorlab/corpus/tokenizer.hpp"
#include "anchorlab/model/transformer.hpp"

namespace anchorlab {

enum class IsolationScope { kAnchors, kPositions };

/// Cuts attention from chosen rows to every earlier position in the chosen
/// layers. With kAnchors the rows are each prompt's label-word positions.
struct IsolationSpec {
  std::vector<std::size_t> layers;
  IsolationScope scope = IsolationScope::kAnchors;
  /// Rows for kPositions.
  std::vector<std::size_t> positions;
  /// Label for reports: "first", "last" or "explicit".
  std::string variant = "explicit";

  static IsolationSpec first(std::size_t k, std::size_t n_layers);
  static IsolationSpec last(std::size_t k, std::size_t n_layers);
};

struct LoyaltyRecord {
  std::size_t base_label = 0;
  std::size_t edited_label = 0;
  std::vector<TokenId> base_top5;
  std::vector<TokenId> edited_top5;
  double jaccard = 0.0;
};

struct LoyaltyResult {
  double label_loyalty = 100.0;  ///< percent
  double word_loyalty = 100.0;   ///< percent
  std::vector<LoyaltyRecord> records;
};

/// Token ids of the k largest entries, ties broken by lower id.
template <typename T>
std::vector<TokenId> top_k(std::span<const T> logits, std::size_t k);

/// |top5(a) & top5(b)| / |top5(a) | top5(b)|.
template <typename T>
double jaccard_top5(std::span<const T> base, std::span<const T> edited);

/// Zero-edge hook plan of `spec` for one prompt.
template <typename T>
HookPlan<T> isolation_plan(const IsolationSpec& spec, const IclPrompt& prompt, std::size_t n_layers);

/// Label/word loyalty of isolated runs against unhooked runs of the same prompts.
template <typename T>
LoyaltyResult isolate_and_run(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts,
                              const IsolationSpec& spec);

struct SweepRow {
  std::string side;
  std::size_t k = 0;
  LoyaltyResult result;
};

/// One isolation run per k on the given side ("first" or "last").
template <typename T>
std::vector<SweepRow> layer_sweep(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts,
                                  const std::vector<std::size_t>& ks, const std::string& side);

/// Columns: variant, k, label_loyalty, word_loyalty.
std::string loyalty_csv(const std::vector<SweepRow>& rows);

/// One JSON object per prompt with base/edited labels and top-5 token strings.
std::string loyalty_audit_jsonl(const SweepRow& row, const Tokenizer& tok);

}  // namespace anchorlab
