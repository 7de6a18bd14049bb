// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "anchorlab/corpus/prompt.hpp"
#include "anchorlab/model/checkpoint.hpp"
#include "anchorlab/ops.hpp"
#include "anchorlab/tensor.hpp"

namespace anchorlab {

template <typename T>
struct LayerWeights {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> fc_w, fc_b, proj_w, proj_b;
};

/// GPT-2 layout: token + learned position embeddings, pre-norm blocks with
/// multi-head causal self-attention and a GELU MLP, final norm, tied or
/// untied output head.
template <typename T>
struct ModelWeights {
  ModelConfig config;
  Tensor<T> wte, wpe;
  std::vector<LayerWeights<T>> layers;
  Tensor<T> lnf_gain, lnf_bias;
  /// [vocab, d_model]; aliases `wte` when the head is tied.
  Tensor<T> lm_head;

  static ModelWeights from_checkpoint(const Checkpoint<T>& ckpt);
  Checkpoint<T> to_checkpoint(std::map<std::string, std::string> meta = {}) const;

  /// Copy whose parameters are leaves on `tape` (the tied head stays aliased).
  ModelWeights track(Tape<T>& tape) const;
  /// Parameters in a fixed order (tied head listed once).
  std::vector<const Tensor<T>*> params() const;
  std::vector<Tensor<T>*> params();
};

/// Zeroes attention entries (row, [col_begin, col_end)) of one layer, for every
/// head or a single one. Positions are original sequence positions.
struct ZeroEdge {
  std::size_t layer = 0;
  std::size_t row = 0;
  std::size_t col_begin = 0;
  std::size_t col_end = 0;
  std::optional<std::size_t> head;
};

/// Multiplies A_{l,h}(target, p) by multipliers[l, h, cls] for every anchor
/// (p, cls). The multiplier tensor may be tracked for gradient training.
template <typename T>
struct AnchorScale {
  std::size_t target = 0;
  std::vector<Anchor> anchors;
  /// [n_layers, n_heads, n_classes]
  Tensor<T> multipliers;
};

/// Precomputed residual-stream states entering each layer for a set of
/// positions, injected as extra attendable key/value positions.
template <typename T>
struct PrefixStates {
  /// Original sequence positions of the injected states, ascending.
  std::vector<std::size_t> positions;
  /// per_layer[l]: [positions.size(), d_model] input to block l.
  std::vector<Tensor<T>> per_layer;

  bool empty() const noexcept { return positions.empty(); }
};

/// Additive perturbation of one post-softmax attention entry (finite
/// difference probes).
template <typename T>
struct AttentionDelta {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  T delta = 0;
};

/// Declarative per-layer attention edits.
template <typename T>
struct HookPlan {
  std::vector<ZeroEdge> zero_edges;
  /// Zero before the softmax instead (masking, which renormalizes the row).
  bool zero_before_softmax = false;
  /// Renormalize rows after post-softmax zeroing.
  bool renormalize_zeroed = false;
  std::optional<AnchorScale<T>> anchor_scale;
  std::optional<PrefixStates<T>> prefix;
  std::vector<AttentionDelta<T>> deltas;

  bool empty() const noexcept {
    return zero_edges.empty() && !anchor_scale && (!prefix || prefix->empty()) && deltas.empty();
  }
};

struct CaptureFlags {
  bool attention = false;
  bool queries_keys = false;
  bool hidden = false;
};

/// Per-(layer, head) attention as used by the layer (after any hook edits),
/// row index = query slot, column = key slot.
template <typename T>
struct AttentionTrace {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<std::size_t> query_positions;
  std::vector<std::size_t> key_positions;
  /// index l * n_heads + h
  std::vector<Tensor<T>> attn;
  std::vector<Tensor<T>> grads;
  std::vector<Tensor<T>> queries;
  std::vector<Tensor<T>> keys;

  const Tensor<T>& at(std::size_t layer, std::size_t head) const { return attn.at(layer * n_heads + head); }
  /// A_l: sum over heads.
  Tensor<T> head_sum(std::size_t layer) const;
};

template <typename T>
struct ForwardResult {
  /// [query length, vocab]
  Tensor<T> logits;
  AttentionTrace<T> trace;
  /// hidden[l]: [len, d_model] residual entering block l; hidden[N] is the
  /// final residual before the output norm.
  std::vector<Tensor<T>> hidden;
  /// Tape handles of the post-softmax attention matrices (when taped).
  std::vector<NodeId> attention_nodes;
};

struct ForwardOptions {
  CaptureFlags capture;
  /// Original position of the first token (default 0).
  std::size_t first_position = 0;
};

/// Runs the model over `tokens`. With a tape, all attention matrices are on
/// it (as leaves when they do not depend on tracked inputs) and their handles
/// are returned for retention.
template <typename T>
ForwardResult<T> forward(const ModelWeights<T>& w, std::span<const TokenId> tokens, const HookPlan<T>& hooks = {},
                         const ForwardOptions& opts = {}, Tape<T>* tape = nullptr);

/// Packed multi-sequence forward used for training: sequences are
/// concatenated row-wise and attend only within themselves. No hooks.
template <typename T>
Tensor<T> forward_packed(const ModelWeights<T>& w, const std::vector<std::vector<TokenId>>& sequences);

/// Cross-entropy at the target over the prompt's anchor-id logits.
template <typename T>
Tensor<T> label_loss(const Tensor<T>& logits, const IclPrompt& prompt, std::size_t row, std::size_t label);

/// Attention trace with `grads` holding dL/dA for every (layer, head), L the
/// label cross-entropy at the target against `label`.
template <typename T>
AttentionTrace<T> saliency_trace(const ModelWeights<T>& w, const IclPrompt& prompt, std::size_t label);

/// Saliency I_l = sum_h |A_{h,l} * dL/dA_{h,l}| (element-wise) for every layer,
/// with L the label cross-entropy at the target against `label`.
template <typename T>
std::vector<Tensor<T>> forward_with_saliency(const ModelWeights<T>& w, const IclPrompt& prompt, std::size_t label);

/// Residual states of every layer for every prefix position.
template <typename T>
PrefixStates<T> precompute_prefix_states(const ModelWeights<T>& w, std::span<const TokenId> prefix);

/// Restriction of `states` to the given positions (must be present), keeping
/// the order of `positions`.
template <typename T>
PrefixStates<T> select_states(const PrefixStates<T>& states, const std::vector<std::size_t>& positions);

/// Index of the largest anchor-id logit at `row`.
template <typename T>
std::size_t predict_label(const Tensor<T>& logits, std::size_t row, const std::vector<TokenId>& label_ids);

}  // namespace anchorlab
