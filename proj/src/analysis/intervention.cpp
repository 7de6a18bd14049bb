// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/analysis/intervention.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <stdexcept>

#include "anchorlab/harness/csv.hpp"
#include "anchorlab/parallel.hpp"

namespace anchorlab {

IsolationSpec IsolationSpec::first(std::size_t k, std::size_t n_layers) {
  if (k > n_layers) throw std::out_of_range("isolation: k = " + std::to_string(k) + " exceeds " + std::to_string(n_layers) + " layers");
  IsolationSpec s;
  for (std::size_t l = 0; l < k; ++l) s.layers.push_back(l);
  s.variant = "first";
  return s;
}

IsolationSpec IsolationSpec::last(std::size_t k, std::size_t n_layers) {
  if (k > n_layers) throw std::out_of_range("isolation: k = " + std::to_string(k) + " exceeds " + std::to_string(n_layers) + " layers");
  IsolationSpec s;
  for (std::size_t l = n_layers - k; l < n_layers; ++l) s.layers.push_back(l);
  s.variant = "last";
  return s;
}

template <typename T>
std::vector<TokenId> top_k(std::span<const T> logits, std::size_t k) {
  if (logits.size() < k) throw std::invalid_argument("top_k: vocabulary of " + std::to_string(logits.size()) + " is smaller than " + std::to_string(k));
  std::vector<TokenId> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](TokenId a, TokenId b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  idx.resize(k);
  return idx;
}

template <typename T>
double jaccard_top5(std::span<const T> base, std::span<const T> edited) {
  if (base.size() != edited.size()) throw std::invalid_argument("jaccard_top5: logits over different vocabularies");
  const auto a = top_k(base, 5);
  const auto b = top_k(edited, 5);
  const std::set<TokenId> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (auto t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

template <typename T>
HookPlan<T> isolation_plan(const IsolationSpec& spec, const IclPrompt& prompt, std::size_t n_layers) {
  HookPlan<T> plan;
  std::vector<std::size_t> rows;
  if (spec.scope == IsolationScope::kAnchors) {
    for (const auto& a : prompt.anchors) rows.push_back(a.position);
  } else {
    rows = spec.positions;
  }
  for (auto l : spec.layers) {
    if (l >= n_layers) throw std::out_of_range("isolation: layer " + std::to_string(l) + " >= " + std::to_string(n_layers));
    for (auto p : rows) {
      if (p >= prompt.size()) throw std::out_of_range("isolation: row " + std::to_string(p) + " outside the prompt");
      if (p > 0) plan.zero_edges.push_back({l, p, 0, p, std::nullopt});
    }
  }
  return plan;
}

namespace {

template <typename T>
std::span<const T> row_span(const Tensor<T>& logits, std::size_t row) {
  const std::size_t v = logits.dim(1);
  return logits.data().subspan(row * v, v);
}

}  // namespace

template <typename T>
LoyaltyResult isolate_and_run(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts,
                              const IsolationSpec& spec) {
  if (prompts.empty()) throw std::invalid_argument("isolate_and_run: no prompts");
  for (auto l : spec.layers) {
    if (l >= w.config.n_layers) throw std::out_of_range("isolation: layer " + std::to_string(l) + " >= " + std::to_string(w.config.n_layers));
  }
  LoyaltyResult out;
  out.records.resize(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t k) {
    const auto& p = prompts[k];
    if (spec.scope == IsolationScope::kAnchors && p.anchors.empty()) {
      throw std::invalid_argument("isolate_and_run: prompt " + std::to_string(k) + " has no label words");
    }
    const auto base = forward<T>(w, p.tokens);
    const auto plan = isolation_plan<T>(spec, p, w.config.n_layers);
    const auto edited = plan.empty() ? base : forward<T>(w, p.tokens, plan);
    auto& r = out.records[k];
    const auto b = row_span(base.logits, p.target);
    const auto e = row_span(edited.logits, p.target);
    r.base_label = predict_label(base.logits, p.target, p.label_ids);
    r.edited_label = predict_label(edited.logits, p.target, p.label_ids);
    r.base_top5 = top_k(b, 5);
    r.edited_top5 = top_k(e, 5);
    r.jaccard = jaccard_top5(b, e);
  });
  double same = 0.0, jac = 0.0;
  for (const auto& r : out.records) {
    same += r.base_label == r.edited_label ? 1.0 : 0.0;
    jac += r.jaccard;
  }
  const double n = static_cast<double>(prompts.size());
  out.label_loyalty = 100.0 * same / n;
  out.word_loyalty = 100.0 * jac / n;
  return out;
}

template <typename T>
std::vector<SweepRow> layer_sweep(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts,
                                  const std::vector<std::size_t>& ks, const std::string& side) {
  if (side != "first" && side != "last") throw std::invalid_argument("layer_sweep: side must be 'first' or 'last'");
  std::vector<SweepRow> rows;
  for (auto k : ks) {
    const auto spec = side == "first" ? IsolationSpec::first(k, w.config.n_layers) : IsolationSpec::last(k, w.config.n_layers);
    rows.push_back({side, k, isolate_and_run(w, prompts, spec)});
  }
  return rows;
}

std::string loyalty_csv(const std::vector<SweepRow>& rows) {
  CsvWriter csv({"variant", "k", "label_loyalty", "word_loyalty"});
  for (const auto& r : rows) {
    csv.row({r.side, std::to_string(r.k), csv_number(r.result.label_loyalty), csv_number(r.result.word_loyalty)});
  }
  return csv.str();
}

std::string loyalty_audit_jsonl(const SweepRow& row, const Tokenizer& tok) {
  std::string out;
  for (std::size_t i = 0; i < row.result.records.size(); ++i) {
    const auto& r = row.result.records[i];
    nlohmann::ordered_json j;
    j["variant"] = row.side;
    j["k"] = row.k;
    j["prompt"] = i;
    j["base_label"] = r.base_label;
    j["edited_label"] = r.edited_label;
    std::vector<std::string> a, b;
    for (auto t : r.base_top5) a.push_back(tok.display(t));
    for (auto t : r.edited_top5) b.push_back(tok.display(t));
    j["base_top5"] = a;
    j["edited_top5"] = b;
    j["jaccard"] = r.jaccard;
    out += j.dump() + "\n";
  }
  return out;
}

template std::vector<TokenId> top_k(std::span<const float>, std::size_t);
template std::vector<TokenId> top_k(std::span<const double>, std::size_t);
template double jaccard_top5(std::span<const float>, std::span<const float>);
template double jaccard_top5(std::span<const double>, std::span<const double>);
template HookPlan<float> isolation_plan(const IsolationSpec&, const IclPrompt&, std::size_t);
template HookPlan<double> isolation_plan(const IsolationSpec&, const IclPrompt&, std::size_t);
template LoyaltyResult isolate_and_run(const ModelWeights<float>&, const std::vector<IclPrompt>&, const IsolationSpec&);
template LoyaltyResult isolate_and_run(const ModelWeights<double>&, const std::vector<IclPrompt>&, const IsolationSpec&);
template std::vector<SweepRow> layer_sweep(const ModelWeights<float>&, const std::vector<IclPrompt>&,
                                           const std::vector<std::size_t>&, const std::string&);
template std::vector<SweepRow> layer_sweep(const ModelWeights<double>&, const std::vector<IclPrompt>&,
                                           const std::vector<std::size_t>&, const std::string&);

}  // namespace anchorlab
