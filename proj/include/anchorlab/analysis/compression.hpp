// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anchorlab/model/transformer.hpp"

namespace anchorlab {

enum class CompressionMethod { kVanilla, kHiddenAnchor, kTextAnchor, kHiddenRandom };

std::string to_string(CompressionMethod m);
CompressionMethod compression_method_from_string(const std::string& s);

/// How one prompt's demonstrations are presented to the query. Hidden methods
/// inject cached residual states at their original positions; text methods
/// prepend a token sequence that is re-run with the query.
template <typename T>
struct CompressionPlan {
  CompressionMethod method = CompressionMethod::kVanilla;
  /// Demonstration positions kept (hidden methods), ascending.
  std::vector<std::size_t> selected;
  PrefixStates<T> states;
  /// Context tokens placed before the query (text methods).
  std::vector<TokenId> context_tokens;
  /// Length of the full demonstration region; hidden runs start the query here.
  std::size_t demo_len = 0;
  std::uint64_t seed = 0;

  bool hidden() const noexcept {
    return method == CompressionMethod::kHiddenAnchor || method == CompressionMethod::kHiddenRandom;
  }
};

/// Hidden-anchor selection: anchors and template scaffolding of the
/// demonstration region.
std::vector<std::size_t> anchor_selection(const IclPrompt& prompt);

/// Builds the plan for one prompt. Hidden-random draws as many positions as
/// the hidden-anchor selection, uniformly from the demonstration region.
template <typename T>
CompressionPlan<T> make_plan(CompressionMethod method, const IclPrompt& prompt, const ModelWeights<T>& w,
                             std::uint64_t seed = 0);

/// Hidden plan over explicit positions.
template <typename T>
CompressionPlan<T> make_hidden_plan(const IclPrompt& prompt, const ModelWeights<T>& w,
                                    const std::vector<std::size_t>& positions);

/// Logits for every query row under the plan. The last row predicts the label.
template <typename T>
Tensor<T> run_compressed(const ModelWeights<T>& w, const CompressionPlan<T>& plan, std::span<const TokenId> query);

template <typename T>
void save_plan(const std::filesystem::path& dir, const CompressionPlan<T>& plan);
template <typename T>
CompressionPlan<T> load_plan(const std::filesystem::path& dir);

struct MethodReport {
  CompressionMethod method = CompressionMethod::kVanilla;
  double label_loyalty = 100.0;
  double word_loyalty = 100.0;
  double accuracy = 0.0;
  double median_latency_ms = 0.0;
  double latency_stddev_ms = 0.0;
  double speedup = 1.0;
  bool noisy = false;
};

struct BenchReport {
  std::vector<MethodReport> methods;
  /// Mean of (L_demo + L_x) / L_x over the prompts.
  double length_ratio = 0.0;
  std::vector<std::string> warnings;
};

struct BenchOptions {
  std::uint64_t seed = 0;
  /// Timed forward passes per prompt and method.
  std::size_t repeats = 3;
  bool time = true;
};

/// Loyalty and accuracy against the vanilla prompt, and median forward
/// latency with speedup over vanilla. Timing runs single-threaded and
/// excludes plan construction.
template <typename T>
BenchReport benchmark(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts,
                      const std::vector<CompressionMethod>& methods, const BenchOptions& options = {});

/// Columns: method, label_loyalty, word_loyalty, accuracy, ratio.
std::string bench_csv(const BenchReport& report);
/// Columns: method, median_latency_ms, speedup, ratio, noisy.
std::string bench_timing_csv(const BenchReport& report);

}  // namespace anchorlab
