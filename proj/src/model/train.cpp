// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/model/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "anchorlab/parallel.hpp"
#include "anchorlab/rng.hpp"

namespace anchorlab {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

template <typename T>
ModelWeights<T> init_weights(const ModelConfig& config, double init_std, std::uint64_t seed) {
  config.validate();
  Checkpoint<T> ckpt;
  ckpt.config = config;
  const CounterRng root(seed, "init");
  const double resid_std = init_std / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  for (const auto& [name, shape] : required_tensors(config)) {
    auto rng = root.fork(name);
    const std::size_t n = shape_numel(shape);
    std::vector<T> v(n, T(0));
    const bool gain = name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight";
    const bool bias = !gain && (name.ends_with(".bias"));
    if (gain) {
      std::fill(v.begin(), v.end(), T(1));
    } else if (!bias) {
      const bool resid = name.ends_with("attn.proj.weight") || name.ends_with("mlp.proj.weight");
      const double sd = resid ? resid_std : init_std;
      for (auto& x : v) x = static_cast<T>(sd * rng.normal());
    }
    ckpt.tensors.emplace(name, Tensor<T>(shape, std::move(v)));
  }
  return ModelWeights<T>::from_checkpoint(ckpt);
}

template <typename T>
double prompt_accuracy(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts) {
  if (prompts.empty()) throw std::invalid_argument("prompt_accuracy: no prompts");
  std::vector<int> hit(prompts.size(), 0);
  parallel_for(prompts.size(), [&](std::size_t i) {
    const auto& p = prompts[i];
    if (!p.query_label) throw std::invalid_argument("prompt_accuracy: prompt without a gold label");
    const auto res = forward<T>(w, p.tokens);
    hit[i] = predict_label(res.logits, p.target, p.label_ids) == *p.query_label;
  });
  double n = 0;
  for (int h : hit) n += h;
  return n / static_cast<double>(prompts.size());
}

std::vector<IclPrompt> task_eval_prompts(const SyntheticTask& task, std::size_t n, std::size_t per_class,
                                         std::uint64_t seed, std::size_t max_seq_len) {
  return build_prompt_set(task.tpl, task.tokenizer, task.train, task.test, n, per_class, seed, max_seq_len);
}

std::map<std::string, std::string> task_meta(const TaskSpec& spec) {
  return {{"task.kind", to_string(spec.kind)},
          {"task.n_classes", std::to_string(spec.n_classes)},
          {"task.vocab_size", std::to_string(spec.vocab_size)},
          {"task.n_train", std::to_string(spec.n_train)},
          {"task.n_test", std::to_string(spec.n_test)},
          {"task.seed", std::to_string(spec.seed)},
          {"task.shared_cue_rate", format_number(spec.shared_cue_rate)}};
}

TaskSpec task_spec_from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("checkpoint meta has no '" + key + "' entry");
    return it->second;
  };
  TaskSpec s;
  s.kind = task_kind_from_string(get("task.kind"));
  s.n_classes = std::stoul(get("task.n_classes"));
  s.vocab_size = std::stoul(get("task.vocab_size"));
  s.n_train = std::stoul(get("task.n_train"));
  s.n_test = std::stoul(get("task.n_test"));
  s.seed = std::stoull(get("task.seed"));
  s.shared_cue_rate = std::stod(get("task.shared_cue_rate"));
  return s;
}

namespace {

// Label words of the fixed-mapping sequences: the first pool words that are
// not template label words.
std::vector<std::string> fixed_label_words(const SyntheticTask& task) {
  std::vector<std::string> out;
  for (const auto& w : task.label_pool) {
    if (out.size() == task.spec.n_classes) break;
    if (std::find(task.tpl.label_words.begin(), task.tpl.label_words.end(), w) == task.tpl.label_words.end()) {
      out.push_back(w);
    }
  }
  if (out.size() < task.spec.n_classes) throw std::invalid_argument("train_toy: label pool too small for a fixed mapping");
  return out;
}

struct TrainSequence {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
};

TrainSequence make_sequence(const SyntheticTask& task, const ToyRecipe& recipe, std::size_t max_seq_len,
                            std::size_t step, CounterRng rng) {
  const std::size_t C = task.spec.n_classes;
  Template tpl = task.tpl;
  const double draw = rng.uniform();
  const bool fixed = !recipe.permute_labels || step < recipe.fixed_phase_steps || draw < recipe.fixed_label_rate;
  if (fixed && recipe.permute_labels) {
    tpl.label_words = fixed_label_words(task);
  } else if (!fixed) {
    auto pool = task.label_pool;
    rng.shuffle(pool);
    tpl.label_words.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(C));
  }
  const std::size_t shots = 1 + rng.below(recipe.max_shots);
  const auto demos = sample_demos(task.train, C, shots, rng.next_u64());
  const auto& query = task.train[rng.below(task.train.size())];
  const auto p = build_prompt(tpl, task.tokenizer, demos, query, rng.next_u64(), max_seq_len);

  TrainSequence s;
  s.tokens = p.tokens;
  std::vector<bool> seen(C, false);
  for (const auto& a : p.anchors) {
    if (fixed || seen[a.cls]) {
      s.rows.push_back(a.position - 1);
      s.targets.push_back(p.tokens[a.position]);
    }
    seen[a.cls] = true;
  }
  s.rows.push_back(p.target);
  s.targets.push_back(p.label_ids[query.label]);
  return s;
}

}  // namespace

template <typename T>
Checkpoint<T> train_toy(const SyntheticTask& task, ModelConfig config, const ToyRecipe& recipe, ToyTrainLog* log) {
  config.vocab_size = task.tokenizer.size();
  config.validate();
  if (recipe.batch == 0 || recipe.max_shots == 0) throw std::invalid_argument("train_toy: batch and max_shots must be positive");
  if (task.train.empty()) throw std::invalid_argument("train_toy: empty training split");
  if (recipe.permute_labels && task.label_pool.size() < task.spec.n_classes) {
    throw std::invalid_argument("train_toy: label pool smaller than the class count");
  }

  auto weights = init_weights<T>(config, recipe.init_std, recipe.seed);
  AdamState<T> adam(recipe.adam);
  const CounterRng data_rng(recipe.seed, "toy-batches");
  ToyTrainLog local;
  ToyTrainLog& out = log ? *log : local;
  out.loss.clear();

  for (std::size_t step = 0; step < recipe.steps; ++step) {
    std::vector<std::vector<TokenId>> seqs;
    std::vector<std::size_t> rows, targets;
    std::size_t offset = 0;
    for (std::size_t b = 0; b < recipe.batch; ++b) {
      auto s = make_sequence(task, recipe, config.max_seq_len, step, data_rng.fork(step * recipe.batch + b));
      for (std::size_t i = 0; i < s.rows.size(); ++i) {
        rows.push_back(offset + s.rows[i]);
        targets.push_back(s.targets[i]);
      }
      offset += s.tokens.size();
      seqs.push_back(std::move(s.tokens));
    }

    Tape<T> tape;
    auto tracked = weights.track(tape);
    const auto logits = forward_packed(tracked, seqs);
    const auto loss = ops::cross_entropy_rows(logits, rows, targets);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw std::runtime_error("train_toy: non-finite loss at step " + std::to_string(step));
    }
    out.loss.push_back(value);

    const auto grads = tape.backward(loss);
    auto params = weights.params();
    const auto tracked_params = tracked.params();
    std::vector<std::span<const T>> g;
    g.reserve(params.size());
    for (const auto* tp : tracked_params) g.push_back(grads.at(tp->node()).data());

    double lr_scale = 1.0;
    if (recipe.warmup > 0 && step < recipe.warmup) lr_scale = static_cast<double>(step + 1) / static_cast<double>(recipe.warmup);
    if (recipe.steps > recipe.warmup) {
      const double progress = static_cast<double>(std::max(step, recipe.warmup) - recipe.warmup) /
                              static_cast<double>(recipe.steps - recipe.warmup);
      lr_scale *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    adam.step(params, g, lr_scale);
    if (config.tied_head) weights.lm_head = weights.wte;
  }

  const std::size_t tail = std::max<std::size_t>(1, out.loss.size() / 10);
  out.final_loss = 0.0;
  for (std::size_t i = out.loss.size() - std::min(tail, out.loss.size()); i < out.loss.size(); ++i) {
    out.final_loss += out.loss[i];
  }
  if (!out.loss.empty()) out.final_loss /= static_cast<double>(std::min(tail, out.loss.size()));
  if (recipe.eval_prompts > 0 && !task.test.empty()) {
    const auto prompts = task_eval_prompts(task, recipe.eval_prompts, 1, recipe.seed ^ 0x5eedULL, config.max_seq_len);
    out.eval_accuracy = prompt_accuracy(weights, prompts);
  }

  auto meta = task_meta(task.spec);
  meta["recipe.steps"] = std::to_string(recipe.steps);
  meta["recipe.batch"] = std::to_string(recipe.batch);
  meta["recipe.fixed_label_rate"] = format_number(recipe.fixed_label_rate);
  meta["recipe.fixed_phase_steps"] = std::to_string(recipe.fixed_phase_steps);
  meta["recipe.max_shots"] = std::to_string(recipe.max_shots);
  meta["recipe.lr"] = format_number(recipe.adam.lr);
  meta["recipe.seed"] = std::to_string(recipe.seed);
  meta["final_loss"] = format_number(out.final_loss);
  meta["eval_accuracy"] = format_number(out.eval_accuracy);
  meta["tokenizer"] = "synthetic-word-level";
  return weights.to_checkpoint(meta);
}

template ModelWeights<float> init_weights(const ModelConfig&, double, std::uint64_t);
template ModelWeights<double> init_weights(const ModelConfig&, double, std::uint64_t);
template double prompt_accuracy(const ModelWeights<float>&, const std::vector<IclPrompt>&);
template double prompt_accuracy(const ModelWeights<double>&, const std::vector<IclPrompt>&);
template Checkpoint<float> train_toy(const SyntheticTask&, ModelConfig, const ToyRecipe&, ToyTrainLog*);
template Checkpoint<double> train_toy(const SyntheticTask&, ModelConfig, const ToyRecipe&, ToyTrainLog*);

}  // namespace anchorlab
