// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace anchorlab {

using namespace ops;

template <typename T>
ModelWeights<T> ModelWeights<T>::from_checkpoint(const Checkpoint<T>& ckpt) {
  ckpt.validate();
  ModelWeights w;
  w.config = ckpt.config;
  w.wte = ckpt.at("wte");
  w.wpe = ckpt.at("wpe");
  for (std::size_t l = 0; l < ckpt.config.n_layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    LayerWeights<T> lw;
    lw.ln1_gain = ckpt.at(p + "ln_1.weight");
    lw.ln1_bias = ckpt.at(p + "ln_1.bias");
    lw.wq = ckpt.at(p + "attn.q.weight");
    lw.bq = ckpt.at(p + "attn.q.bias");
    lw.wk = ckpt.at(p + "attn.k.weight");
    lw.bk = ckpt.at(p + "attn.k.bias");
    lw.wv = ckpt.at(p + "attn.v.weight");
    lw.bv = ckpt.at(p + "attn.v.bias");
    lw.wo = ckpt.at(p + "attn.proj.weight");
    lw.bo = ckpt.at(p + "attn.proj.bias");
    lw.ln2_gain = ckpt.at(p + "ln_2.weight");
    lw.ln2_bias = ckpt.at(p + "ln_2.bias");
    lw.fc_w = ckpt.at(p + "mlp.fc.weight");
    lw.fc_b = ckpt.at(p + "mlp.fc.bias");
    lw.proj_w = ckpt.at(p + "mlp.proj.weight");
    lw.proj_b = ckpt.at(p + "mlp.proj.bias");
    w.layers.push_back(std::move(lw));
  }
  w.lnf_gain = ckpt.at("ln_f.weight");
  w.lnf_bias = ckpt.at("ln_f.bias");
  w.lm_head = ckpt.config.tied_head ? w.wte : ckpt.at("lm_head.weight");
  return w;
}

template <typename T>
Checkpoint<T> ModelWeights<T>::to_checkpoint(std::map<std::string, std::string> meta) const {
  Checkpoint<T> c;
  c.config = config;
  c.meta = std::move(meta);
  auto put = [&](const std::string& name, const Tensor<T>& t) { c.tensors.insert_or_assign(name, t.detach()); };
  put("wte", wte);
  put("wpe", wpe);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    const auto& lw = layers[l];
    put(p + "ln_1.weight", lw.ln1_gain);
    put(p + "ln_1.bias", lw.ln1_bias);
    put(p + "attn.q.weight", lw.wq);
    put(p + "attn.q.bias", lw.bq);
    put(p + "attn.k.weight", lw.wk);
    put(p + "attn.k.bias", lw.bk);
    put(p + "attn.v.weight", lw.wv);
    put(p + "attn.v.bias", lw.bv);
    put(p + "attn.proj.weight", lw.wo);
    put(p + "attn.proj.bias", lw.bo);
    put(p + "ln_2.weight", lw.ln2_gain);
    put(p + "ln_2.bias", lw.ln2_bias);
    put(p + "mlp.fc.weight", lw.fc_w);
    put(p + "mlp.fc.bias", lw.fc_b);
    put(p + "mlp.proj.weight", lw.proj_w);
    put(p + "mlp.proj.bias", lw.proj_b);
  }
  put("ln_f.weight", lnf_gain);
  put("ln_f.bias", lnf_bias);
  if (!config.tied_head) put("lm_head.weight", lm_head);
  return c;
}

template <typename T>
std::vector<Tensor<T>*> ModelWeights<T>::params() {
  std::vector<Tensor<T>*> out = {&wte, &wpe};
  for (auto& lw : layers) {
    for (auto* t : {&lw.ln1_gain, &lw.ln1_bias, &lw.wq, &lw.bq, &lw.wk, &lw.bk, &lw.wv, &lw.bv, &lw.wo, &lw.bo,
                    &lw.ln2_gain, &lw.ln2_bias, &lw.fc_w, &lw.fc_b, &lw.proj_w, &lw.proj_b}) {
      out.push_back(t);
    }
  }
  out.push_back(&lnf_gain);
  out.push_back(&lnf_bias);
  if (!config.tied_head) out.push_back(&lm_head);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> ModelWeights<T>::params() const {
  auto mut = const_cast<ModelWeights*>(this)->params();
  return {mut.begin(), mut.end()};
}

template <typename T>
ModelWeights<T> ModelWeights<T>::track(Tape<T>& tape) const {
  ModelWeights out = *this;
  for (auto* p : out.params()) *p = tape.leaf(p->detach());
  if (config.tied_head) out.lm_head = out.wte;
  return out;
}

template <typename T>
Tensor<T> AttentionTrace<T>::head_sum(std::size_t layer) const {
  Tensor<T> acc = at(layer, 0).detach();
  for (std::size_t h = 1; h < n_heads; ++h) acc = add(acc, at(layer, h).detach());
  return acc;
}

namespace {

std::size_t index_of(const std::vector<std::size_t>& positions, std::size_t pos, const char* what) {
  auto it = std::lower_bound(positions.begin(), positions.end(), pos);
  if (it == positions.end() || *it != pos) {
    throw std::out_of_range(std::string("invalid hook: ") + what + " position " + std::to_string(pos) +
                            " is not in the sequence");
  }
  return static_cast<std::size_t>(it - positions.begin());
}

template <typename T>
void validate_hooks(const ModelConfig& cfg, const HookPlan<T>& hooks) {
  for (const auto& z : hooks.zero_edges) {
    if (z.layer >= cfg.n_layers) throw std::out_of_range("invalid hook: zero edge layer " + std::to_string(z.layer));
    if (z.head && *z.head >= cfg.n_heads) throw std::out_of_range("invalid hook: zero edge head " + std::to_string(*z.head));
    if (z.col_begin > z.col_end) throw std::out_of_range("invalid hook: zero edge column range is reversed");
  }
  if (hooks.anchor_scale) {
    const auto& s = *hooks.anchor_scale;
    const auto& m = s.multipliers;
    if (m.rank() != 3 || m.dim(0) != cfg.n_layers || m.dim(1) != cfg.n_heads) {
      throw DimensionError("invalid hook: anchor multipliers " + shape_str(m.shape()) + " do not match " +
                           std::to_string(cfg.n_layers) + " layers x " + std::to_string(cfg.n_heads) + " heads");
    }
    for (const auto& a : s.anchors) {
      if (a.cls >= m.dim(2)) throw std::out_of_range("invalid hook: anchor class " + std::to_string(a.cls));
      if (a.position >= s.target) throw std::out_of_range("invalid hook: anchor must precede the target row");
    }
    if (!m.tracked()) {
      for (auto v : m.data()) {
        if (!std::isfinite(v) || v <= T(0)) throw std::invalid_argument("invalid hook: anchor multipliers must be finite and positive");
      }
    }
  }
  for (const auto& d : hooks.deltas) {
    if (d.layer >= cfg.n_layers || d.head >= cfg.n_heads) throw std::out_of_range("invalid hook: delta layer/head");
  }
  if (hooks.prefix && !hooks.prefix->empty()) {
    const auto& p = *hooks.prefix;
    if (p.per_layer.size() < cfg.n_layers) {
      throw DimensionError("prefix states cover " + std::to_string(p.per_layer.size()) + " layers, model has " +
                           std::to_string(cfg.n_layers));
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      if (p.per_layer[l].shape() != Shape{p.positions.size(), cfg.d_model}) {
        throw DimensionError("prefix states at layer " + std::to_string(l) + " have shape " +
                             shape_str(p.per_layer[l].shape()) + ", expected [" + std::to_string(p.positions.size()) +
                             ", " + std::to_string(cfg.d_model) + "]");
      }
    }
    if (!std::is_sorted(p.positions.begin(), p.positions.end()) ||
        std::adjacent_find(p.positions.begin(), p.positions.end()) != p.positions.end()) {
      throw std::invalid_argument("prefix positions must be strictly increasing");
    }
  }
}

template <typename T>
Tensor<T> mlp_block(const LayerWeights<T>& lw, const Tensor<T>& x, T eps) {
  auto m = layer_norm(x, lw.ln2_gain, lw.ln2_bias, eps);
  auto f = gelu(add_bias(matmul(m, lw.fc_w), lw.fc_b));
  return add(x, add_bias(matmul(f, lw.proj_w), lw.proj_b));
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const ModelWeights<T>& w, std::span<const TokenId> tokens, const HookPlan<T>& hooks,
                         const ForwardOptions& opts, Tape<T>* tape) {
  const auto& cfg = w.config;
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (opts.first_position + tokens.size() > cfg.max_seq_len) {
    throw std::length_error("forward: sequence ends at position " + std::to_string(opts.first_position + tokens.size()) +
                            ", max_seq_len is " + std::to_string(cfg.max_seq_len));
  }
  validate_hooks(cfg, hooks);

  const std::size_t n_q = tokens.size();
  const std::size_t H = cfg.n_heads, dh = cfg.d_head();
  const bool has_prefix = hooks.prefix && !hooks.prefix->empty();
  if (has_prefix && hooks.prefix->positions.back() >= opts.first_position) {
    throw std::invalid_argument("forward: injected position " + std::to_string(hooks.prefix->positions.back()) +
                                " is not before the first query position " + std::to_string(opts.first_position));
  }
  const std::size_t n_prefix = has_prefix ? hooks.prefix->positions.size() : 0;

  std::vector<std::size_t> qpos(n_q);
  for (std::size_t i = 0; i < n_q; ++i) qpos[i] = opts.first_position + i;
  std::vector<std::size_t> kpos;
  if (has_prefix) kpos = hooks.prefix->positions;
  kpos.insert(kpos.end(), qpos.begin(), qpos.end());
  const std::size_t n_k = kpos.size();
  const Mask base_mask = position_mask(qpos, kpos);

  // Resolve hook positions to (row, column) slots once.
  struct ZeroSlot {
    std::size_t layer;
    std::optional<std::size_t> head;
    std::size_t row;
    std::vector<std::size_t> cols;
  };
  std::vector<ZeroSlot> zero_slots;
  for (const auto& z : hooks.zero_edges) {
    ZeroSlot s{z.layer, z.head, index_of(qpos, z.row, "zero-edge row"), {}};
    for (std::size_t j = 0; j < n_k; ++j) {
      if (kpos[j] >= z.col_begin && kpos[j] < z.col_end) s.cols.push_back(j);
    }
    zero_slots.push_back(std::move(s));
  }
  std::vector<ScaledEntry> scaled;
  if (hooks.anchor_scale) {
    const auto row = index_of(qpos, hooks.anchor_scale->target, "anchor-scale target");
    for (const auto& a : hooks.anchor_scale->anchors) {
      scaled.push_back({row, index_of(kpos, a.position, "anchor"), a.cls});
    }
  }
  const bool pre_softmax = hooks.zero_before_softmax || hooks.renormalize_zeroed;

  ForwardResult<T> out;
  auto& trace = out.trace;
  trace.n_layers = cfg.n_layers;
  trace.n_heads = H;
  trace.query_positions = qpos;
  trace.key_positions = kpos;
  if (opts.capture.attention) trace.attn.resize(cfg.n_layers * H);
  if (opts.capture.queries_keys) {
    trace.queries.resize(cfg.n_layers * H);
    trace.keys.resize(cfg.n_layers * H);
  }

  const T eps = static_cast<T>(cfg.layernorm_eps);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<TokenId> ids(tokens.begin(), tokens.end());
  Tensor<T> x = add(embedding(w.wte, ids), embedding(w.wpe, qpos));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = w.layers[l];
    if (opts.capture.hidden) out.hidden.push_back(x.detach());
    const Tensor<T> all = has_prefix ? concat_rows<T>({hooks.prefix->per_layer[l], x}) : x;
    const Tensor<T> a_all = layer_norm(all, lw.ln1_gain, lw.ln1_bias, eps);
    const Tensor<T> a_q = has_prefix ? rows(a_all, n_prefix, n_prefix + n_q) : a_all;
    const auto q = add_bias(matmul(a_q, lw.wq), lw.bq);
    const auto k = add_bias(matmul(a_all, lw.wk), lw.bk);
    const auto v = add_bias(matmul(a_all, lw.wv), lw.bv);

    std::vector<Tensor<T>> heads;
    heads.reserve(H);
    for (std::size_t h = 0; h < H; ++h) {
      const auto qh = H == 1 ? q : cols(q, h * dh, (h + 1) * dh);
      const auto kh = H == 1 ? k : cols(k, h * dh, (h + 1) * dh);
      const auto vh = H == 1 ? v : cols(v, h * dh, (h + 1) * dh);
      const auto scores = scale(matmul_nt(qh, kh), inv_sqrt);

      std::vector<std::uint8_t> keep;  // post-softmax zero pattern, built lazily
      Mask mask = base_mask;
      for (const auto& z : zero_slots) {
        if (z.layer != l || (z.head && *z.head != h)) continue;
        for (auto j : z.cols) {
          if (pre_softmax) {
            mask.allowed[z.row * n_k + j] = 0;
          } else {
            if (keep.empty()) keep.assign(n_q * n_k, 1);
            keep[z.row * n_k + j] = 0;
          }
        }
      }
      Tensor<T> attn = softmax_rows(scores, mask);
      if (tape) {
        if (!attn.tracked()) attn = tape->leaf(attn);
        out.attention_nodes.push_back(attn.node());
      }
      if (opts.capture.queries_keys) {
        trace.queries[l * H + h] = qh.detach();
        trace.keys[l * H + h] = kh.detach();
      }

      Tensor<T> edited = attn;
      if (!keep.empty()) {
        std::vector<T> factor(keep.begin(), keep.end());
        edited = mul(edited, Tensor<T>({n_q, n_k}, std::move(factor)));
      }
      bool has_delta = false;
      std::vector<T> delta(n_q * n_k, T(0));
      for (const auto& d : hooks.deltas) {
        if (d.layer != l || d.head != h) continue;
        delta[index_of(qpos, d.row, "delta row") * n_k + index_of(kpos, d.col, "delta column")] += d.delta;
        has_delta = true;
      }
      if (has_delta) edited = add(edited, Tensor<T>({n_q, n_k}, std::move(delta)));
      if (!scaled.empty()) {
        const auto& m = hooks.anchor_scale->multipliers;
        const std::size_t C = m.dim(2);
        const auto flat = reshape(m, {cfg.n_layers * H, C});
        const auto factors = reshape(rows(flat, l * H + h, l * H + h + 1), {C});
        edited = scale_entries(edited, scaled, factors);
      }
      if (opts.capture.attention) trace.attn[l * H + h] = edited.detach();
      heads.push_back(matmul(edited, vh));
    }
    const auto merged = H == 1 ? heads.front() : concat_cols(heads);
    x = add(x, add_bias(matmul(merged, lw.wo), lw.bo));
    x = mlp_block(lw, x, eps);
  }
  if (opts.capture.hidden) out.hidden.push_back(x.detach());
  const auto hf = layer_norm(x, w.lnf_gain, w.lnf_bias, eps);
  out.logits = matmul_nt(hf, w.lm_head);
  return out;
}

template <typename T>
Tensor<T> forward_packed(const ModelWeights<T>& w, const std::vector<std::vector<TokenId>>& sequences) {
  const auto& cfg = w.config;
  if (sequences.empty()) throw std::invalid_argument("forward_packed: no sequences");
  std::vector<TokenId> ids;
  std::vector<std::size_t> pos;
  std::vector<std::size_t> starts;
  for (const auto& s : sequences) {
    if (s.empty() || s.size() > cfg.max_seq_len) throw std::length_error("forward_packed: bad sequence length");
    starts.push_back(ids.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      ids.push_back(s[i]);
      pos.push_back(i);
    }
  }
  starts.push_back(ids.size());
  const std::size_t H = cfg.n_heads, dh = cfg.d_head();
  const T eps = static_cast<T>(cfg.layernorm_eps);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Mask> masks;
  for (const auto& s : sequences) masks.push_back(causal_mask(s.size()));

  Tensor<T> x = add(embedding(w.wte, ids), embedding(w.wpe, pos));
  for (const auto& lw : w.layers) {
    const auto a = layer_norm(x, lw.ln1_gain, lw.ln1_bias, eps);
    const auto q = add_bias(matmul(a, lw.wq), lw.bq);
    const auto k = add_bias(matmul(a, lw.wk), lw.bk);
    const auto v = add_bias(matmul(a, lw.wv), lw.bv);
    std::vector<Tensor<T>> heads;
    for (std::size_t h = 0; h < H; ++h) {
      const auto qh = H == 1 ? q : cols(q, h * dh, (h + 1) * dh);
      const auto kh = H == 1 ? k : cols(k, h * dh, (h + 1) * dh);
      const auto vh = H == 1 ? v : cols(v, h * dh, (h + 1) * dh);
      std::vector<Tensor<T>> segs;
      for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto b = starts[s], e = starts[s + 1];
        const auto sq = sequences.size() == 1 ? qh : rows(qh, b, e);
        const auto sk = sequences.size() == 1 ? kh : rows(kh, b, e);
        const auto sv = sequences.size() == 1 ? vh : rows(vh, b, e);
        const auto attn = softmax_rows(scale(matmul_nt(sq, sk), inv_sqrt), masks[s]);
        segs.push_back(matmul(attn, sv));
      }
      heads.push_back(segs.size() == 1 ? segs.front() : concat_rows(segs));
    }
    const auto merged = H == 1 ? heads.front() : concat_cols(heads);
    x = add(x, add_bias(matmul(merged, lw.wo), lw.bo));
    x = mlp_block(lw, x, eps);
  }
  const auto hf = layer_norm(x, w.lnf_gain, w.lnf_bias, eps);
  return matmul_nt(hf, w.lm_head);
}

template <typename T>
Tensor<T> label_loss(const Tensor<T>& logits, const IclPrompt& prompt, std::size_t row, std::size_t label) {
  const std::size_t V = logits.dim(1);
  std::vector<std::size_t> flat;
  for (auto id : prompt.label_ids) flat.push_back(row * V + id);
  return cross_entropy(take(logits, flat), label);
}

template <typename T>
AttentionTrace<T> saliency_trace(const ModelWeights<T>& w, const IclPrompt& prompt, std::size_t label) {
  Tape<T> tape;
  ForwardOptions opts;
  opts.capture.attention = true;
  auto res = forward<T>(w, prompt.tokens, {}, opts, &tape);
  const auto loss = label_loss(res.logits, prompt, prompt.target, label);
  const std::set<NodeId> retain(res.attention_nodes.begin(), res.attention_nodes.end());
  auto grads = tape.backward(loss, retain);
  auto trace = std::move(res.trace);
  trace.grads.clear();
  for (auto node : res.attention_nodes) trace.grads.push_back(grads.at(node));
  return trace;
}

template <typename T>
std::vector<Tensor<T>> forward_with_saliency(const ModelWeights<T>& w, const IclPrompt& prompt, std::size_t label) {
  const auto trace = saliency_trace(w, prompt, label);
  const auto& cfg = w.config;
  const std::size_t n = prompt.tokens.size();
  std::vector<Tensor<T>> out;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::vector<T> acc(n * n, T(0));
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const auto a = trace.at(l, h).data();
      const auto g = trace.grads[l * cfg.n_heads + h].data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += std::abs(a[i] * g[i]);
    }
    out.push_back(Tensor<T>({n, n}, std::move(acc)));
  }
  return out;
}

template <typename T>
PrefixStates<T> precompute_prefix_states(const ModelWeights<T>& w, std::span<const TokenId> prefix) {
  PrefixStates<T> out;
  if (prefix.empty()) return out;
  ForwardOptions opts;
  opts.capture.hidden = true;
  auto res = forward<T>(w, prefix, {}, opts);
  for (std::size_t i = 0; i < prefix.size(); ++i) out.positions.push_back(i);
  res.hidden.pop_back();
  out.per_layer = std::move(res.hidden);
  return out;
}

template <typename T>
PrefixStates<T> select_states(const PrefixStates<T>& states, const std::vector<std::size_t>& positions) {
  PrefixStates<T> out;
  if (positions.empty()) return out;
  std::vector<std::size_t> idx;
  for (auto p : positions) idx.push_back(index_of(states.positions, p, "selected state"));
  out.positions = positions;
  for (const auto& layer : states.per_layer) out.per_layer.push_back(pick_rows(layer, idx));
  return out;
}

template <typename T>
std::size_t predict_label(const Tensor<T>& logits, std::size_t row, const std::vector<TokenId>& label_ids) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < label_ids.size(); ++c) {
    if (logits.at(row, label_ids[c]) > logits.at(row, label_ids[best])) best = c;
  }
  return best;
}

#define ANCHORLAB_INSTANTIATE_MODEL(T)                                                                               \
  template struct ModelWeights<T>;                                                                                   \
  template struct AttentionTrace<T>;                                                                                 \
  template ForwardResult<T> forward(const ModelWeights<T>&, std::span<const TokenId>, const HookPlan<T>&,            \
                                    const ForwardOptions&, Tape<T>*);                                                \
  template Tensor<T> forward_packed(const ModelWeights<T>&, const std::vector<std::vector<TokenId>>&);                \
  template Tensor<T> label_loss(const Tensor<T>&, const IclPrompt&, std::size_t, std::size_t);                       \
  template AttentionTrace<T> saliency_trace(const ModelWeights<T>&, const IclPrompt&, std::size_t);                 \
  template std::vector<Tensor<T>> forward_with_saliency(const ModelWeights<T>&, const IclPrompt&, std::size_t);      \
  template PrefixStates<T> precompute_prefix_states(const ModelWeights<T>&, std::span<const TokenId>);               \
  template PrefixStates<T> select_states(const PrefixStates<T>&, const std::vector<std::size_t>&);                   \
  template std::size_t predict_label(const Tensor<T>&, std::size_t, const std::vector<TokenId>&);

ANCHORLAB_INSTANTIATE_MODEL(float)
ANCHORLAB_INSTANTIATE_MODEL(double)

}  // namespace anchorlab
