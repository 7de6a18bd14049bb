// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/analysis/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "anchorlab/parallel.hpp"
#include "anchorlab/rng.hpp"

namespace anchorlab {

BetaVector BetaVector::zeros(std::size_t n_layers, std::size_t n_heads, std::size_t n_classes) {
  return {n_layers, n_heads, n_classes, std::vector<double>(n_layers * n_heads * n_classes, 0.0)};
}

double& BetaVector::at(std::size_t l, std::size_t h, std::size_t c) {
  return values.at((l * n_heads + h) * n_classes + c);
}

double BetaVector::at(std::size_t l, std::size_t h, std::size_t c) const {
  return values.at((l * n_heads + h) * n_classes + c);
}

void BetaVector::validate() const {
  if (values.size() != n_layers * n_heads * n_classes) {
    throw std::invalid_argument("beta: " + std::to_string(values.size()) + " values for dims " +
                                std::to_string(n_layers) + "x" + std::to_string(n_heads) + "x" +
                                std::to_string(n_classes));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("beta: non-finite value");
  }
}

std::string BetaVector::to_json() const {
  nlohmann::ordered_json j;
  j["dims"] = {n_layers, n_heads, n_classes};
  j["values"] = values;
  return j.dump(1);
}

BetaVector BetaVector::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const auto dims = j.at("dims").get<std::vector<std::size_t>>();
  if (dims.size() != 3) throw std::invalid_argument("beta: dims must have 3 entries");
  BetaVector b{dims[0], dims[1], dims[2], j.at("values").get<std::vector<double>>()};
  b.validate();
  return b;
}

void BetaVector::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << "\n";
}

BetaVector BetaVector::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

namespace {

void check_classes(std::size_t n_classes, const IclPrompt& prompt) {
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (prompt.anchors_of(c).empty()) {
      throw std::invalid_argument("apply_beta: class " + std::to_string(c) + " has no anchor in the prompt");
    }
  }
}

}  // namespace

template <typename T>
HookPlan<T> apply_beta(HookPlan<T> plan, const BetaVector& beta, const IclPrompt& prompt) {
  beta.validate();
  check_classes(beta.n_classes, prompt);
  std::vector<T> m(beta.values.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = static_cast<T>(std::exp(std::clamp(beta.values[i], -kBetaClip, kBetaClip)));
  }
  plan.anchor_scale = AnchorScale<T>{prompt.target, prompt.anchors,
                                     Tensor<T>({beta.n_layers, beta.n_heads, beta.n_classes}, std::move(m))};
  return plan;
}

template <typename T>
HookPlan<T> apply_beta_tracked(HookPlan<T> plan, const Tensor<T>& beta, const IclPrompt& prompt) {
  if (beta.rank() != 3) throw DimensionError("apply_beta: beta must be [layers, heads, classes]");
  check_classes(beta.dim(2), prompt);
  const auto m = ops::exp(ops::clamp(beta, static_cast<T>(-kBetaClip), static_cast<T>(kBetaClip)));
  plan.anchor_scale = AnchorScale<T>{prompt.target, prompt.anchors, m};
  return plan;
}

namespace {

template <typename T>
Tensor<T> beta_tensor(const BetaVector& b) {
  std::vector<T> v(b.values.begin(), b.values.end());
  return Tensor<T>({b.n_layers, b.n_heads, b.n_classes}, std::move(v));
}

BetaVector beta_from(const ModelConfig& cfg, std::size_t C, std::span<const double> v) {
  BetaVector b = BetaVector::zeros(cfg.n_layers, cfg.n_heads, C);
  std::copy(v.begin(), v.end(), b.values.begin());
  return b;
}

void check_dims(const ModelConfig& cfg, const BetaVector& b) {
  b.validate();
  if (b.n_layers != cfg.n_layers || b.n_heads != cfg.n_heads) {
    throw DimensionError("beta dims " + std::to_string(b.n_layers) + "x" + std::to_string(b.n_heads) +
                         " do not match the model's " + std::to_string(cfg.n_layers) + "x" +
                         std::to_string(cfg.n_heads));
  }
}

}  // namespace

template <typename T>
std::pair<double, BetaVector> beta_loss_and_grad(const ModelWeights<T>& w, const IclPrompt& prompt,
                                                 const BetaVector& beta) {
  check_dims(w.config, beta);
  if (!prompt.query_label) throw std::invalid_argument("beta gradient: prompt without a gold label");
  Tape<T> tape;
  const auto leaf = tape.leaf(beta_tensor<T>(beta));
  const auto plan = apply_beta_tracked<T>({}, leaf, prompt);
  const auto res = forward<T>(w, prompt.tokens, plan);
  const auto loss = label_loss(res.logits, prompt, prompt.target, *prompt.query_label);
  const auto grads = tape.backward(loss);
  const auto g = grads.at(leaf.node()).data();
  BetaVector out = BetaVector::zeros(beta.n_layers, beta.n_heads, beta.n_classes);
  std::copy(g.begin(), g.end(), out.values.begin());
  return {static_cast<double>(loss.item()), out};
}

template <typename T>
ReweightResult train_beta(const ModelWeights<T>& w, const std::vector<IclPrompt>& train, const ReweightConfig& config) {
  if (train.empty()) throw std::invalid_argument("train_beta: empty training set");
  const std::size_t C = train.front().n_classes();
  for (const auto& p : train) {
    if (!p.query_label || *p.query_label >= p.n_classes()) throw std::invalid_argument("train_beta: training prompt without a valid label");
    if (p.n_classes() != C) throw std::invalid_argument("train_beta: prompts disagree on the class count");
  }
  const auto& cfg = w.config;
  Tensor<T> beta({cfg.n_layers, cfg.n_heads, C}, std::vector<T>(cfg.n_layers * cfg.n_heads * C, T(0)));
  AdamState<T> adam(config.adam);
  const CounterRng order_rng(config.seed, "beta-order");
  ReweightResult out;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = order_rng.fork(epoch);
    rng.shuffle(order);
    double sum = 0.0;
    for (auto i : order) {
      const auto& p = train[i];
      Tape<T> tape;
      const auto leaf = tape.leaf(beta);
      const auto res = forward<T>(w, p.tokens, apply_beta_tracked<T>({}, leaf, p));
      const auto loss = label_loss(res.logits, p, p.target, *p.query_label);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) throw std::runtime_error("train_beta: non-finite loss at step " + std::to_string(step));
      sum += value;
      const auto grads = tape.backward(loss);
      adam.step({&beta}, {grads.at(leaf.node()).data()});
      ++step;
    }
    out.epoch_loss.push_back(sum / static_cast<double>(train.size()));
  }
  std::vector<double> v(beta.data().begin(), beta.data().end());
  out.beta = beta_from(cfg, C, v);
  return out;
}

template <typename T>
EvalResult eval_reweighted(const ModelWeights<T>& w, const BetaVector& beta, const std::vector<IclPrompt>& prompts) {
  check_dims(w.config, beta);
  if (prompts.empty()) throw std::invalid_argument("eval_reweighted: no prompts");
  EvalResult out;
  out.predictions.assign(prompts.size(), 0);
  std::vector<int> hit(prompts.size(), 0);
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto& p = prompts[i];
    if (!p.query_label) throw std::invalid_argument("eval_reweighted: prompt without a gold label");
    const auto res = forward<T>(w, p.tokens, apply_beta<T>({}, beta, p));
    out.predictions[i] = predict_label(res.logits, p.target, p.label_ids);
    hit[i] = out.predictions[i] == *p.query_label;
  });
  std::vector<bool> seen;
  for (const auto& p : prompts) {
    if (seen.size() <= *p.query_label) seen.resize(*p.query_label + 1, false);
    seen[*p.query_label] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    out.warnings.push_back("test set has a single class; accuracy is degenerate");
  }
  out.accuracy = static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(prompts.size());
  return out;
}

std::vector<IclPrompt> fixed_demo_prompts(const Template& tpl, const Tokenizer& tok,
                                          const std::vector<LabeledExample>& demos,
                                          const std::vector<LabeledExample>& queries, std::uint64_t order_seed,
                                          std::size_t max_seq_len) {
  std::vector<IclPrompt> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(build_prompt(tpl, tok, demos, q, order_seed, max_seq_len));
  return out;
}

template HookPlan<float> apply_beta(HookPlan<float>, const BetaVector&, const IclPrompt&);
template HookPlan<double> apply_beta(HookPlan<double>, const BetaVector&, const IclPrompt&);
template HookPlan<float> apply_beta_tracked(HookPlan<float>, const Tensor<float>&, const IclPrompt&);
template HookPlan<double> apply_beta_tracked(HookPlan<double>, const Tensor<double>&, const IclPrompt&);
template ReweightResult train_beta(const ModelWeights<float>&, const std::vector<IclPrompt>&, const ReweightConfig&);
template ReweightResult train_beta(const ModelWeights<double>&, const std::vector<IclPrompt>&, const ReweightConfig&);
template std::pair<double, BetaVector> beta_loss_and_grad(const ModelWeights<float>&, const IclPrompt&, const BetaVector&);
template std::pair<double, BetaVector> beta_loss_and_grad(const ModelWeights<double>&, const IclPrompt&, const BetaVector&);
template EvalResult eval_reweighted(const ModelWeights<float>&, const BetaVector&, const std::vector<IclPrompt>&);
template EvalResult eval_reweighted(const ModelWeights<double>&, const BetaVector&, const std::vector<IclPrompt>&);

}  // namespace anchorlab
