// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <nlohmann/json.hpp>
#include <sstream>

#include "anchorlab/analysis/compression.hpp"
#include "anchorlab/analysis/intervention.hpp"
#include "anchorlab/analysis/reweight.hpp"
#include "anchorlab/harness/csv.hpp"
#include "helpers.hpp"
#include "model_helpers.hpp"

using namespace anchorlab;
using testutil::small_task;
using testutil::task_model;
using testutil::task_prompts;

namespace {

std::vector<float> ramp(std::initializer_list<int> top, std::size_t v = 12) {
  std::vector<float> out(v, 0.0f);
  float x = 10.0f;
  for (int t : top) out[static_cast<std::size_t>(t)] = x--;
  return out;
}

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("top-5 jaccard examples") {
  const auto a = ramp({0, 1, 2, 3, 4});
  CHECK(jaccard_top5<float>(a, a) == 1.0);
  const auto b = ramp({5, 6, 7, 8, 9});
  CHECK(jaccard_top5<float>(a, b) == 0.0);
  const auto c = ramp({0, 1, 2, 8, 9});
  CHECK(jaccard_top5<float>(a, c) == doctest::Approx(3.0 / 7.0).epsilon(1e-15));
  const std::vector<float> small(4, 0.0f);
  CHECK_THROWS_AS(jaccard_top5<float>(small, small), std::invalid_argument);
  // Ties resolve to the lowest ids.
  const std::vector<float> flat(8, 1.0f);
  CHECK(top_k<float>(flat, 5) == std::vector<TokenId>{0, 1, 2, 3, 4});
}

TEST_CASE("isolation: no-op spec, sweep endpoints, and loyalty recount") {
  const auto task = small_task();
  const auto w = task_model<float>(task, 3, 4);
  const auto prompts = task_prompts(task, 12);
  IsolationSpec none;
  const auto r0 = isolate_and_run(w, prompts, none);
  CHECK(r0.label_loyalty == 100.0);
  CHECK(r0.word_loyalty == 100.0);
  CHECK_THROWS_AS(isolate_and_run(w, std::vector<IclPrompt>{}, none), std::invalid_argument);

  const auto sweep_first = layer_sweep(w, prompts, {0, 2, 4}, "first");
  const auto sweep_last = layer_sweep(w, prompts, {0, 2, 4}, "last");
  CHECK(sweep_first[0].result.label_loyalty == 100.0);
  CHECK(sweep_first[2].result.label_loyalty == sweep_last[2].result.label_loyalty);
  CHECK(sweep_first[2].result.word_loyalty == sweep_last[2].result.word_loyalty);
  CHECK_THROWS_AS(IsolationSpec::first(5, 4), std::out_of_range);

  for (const auto& row : sweep_first) {
    double same = 0;
    for (const auto& rec : row.result.records) same += rec.base_label == rec.edited_label;
    CHECK(row.result.label_loyalty == 100.0 * same / static_cast<double>(prompts.size()));
    CHECK((row.result.word_loyalty >= 0.0 && row.result.word_loyalty <= 100.0));
  }
  const auto again = layer_sweep(w, prompts, {0, 2, 4}, "first");
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].result.label_loyalty == sweep_first[i].result.label_loyalty);
    CHECK(again[i].result.word_loyalty == sweep_first[i].result.word_loyalty);
  }
  const auto csv = parse_csv(loyalty_csv(sweep_first));
  CHECK(csv.front() == std::vector<std::string>{"variant", "k", "label_loyalty", "word_loyalty"});
  CHECK(csv.size() == 4);
}

TEST_CASE("isolation edits the anchor rows only and leaves lower layers bit-identical") {
  const auto task = small_task();
  const auto w = task_model<double>(task, 5, 4);
  const auto p = task_prompts(task, 1)[0];
  IsolationSpec spec;
  spec.layers = {2};
  const auto plan = isolation_plan<double>(spec, p, 4);
  ForwardOptions opts;
  opts.capture.attention = true;
  const auto base = forward<double>(w, p.tokens, {}, opts);
  const auto edited = forward<double>(w, p.tokens, plan, opts);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) CHECK(same_bits(base.trace.at(l, h), edited.trace.at(l, h)));
  }
  for (std::size_t h = 0; h < 2; ++h) {
    for (const auto& a : p.anchors) {
      for (std::size_t j = 0; j < a.position; ++j) CHECK(edited.trace.at(2, h).at(a.position, j) == 0.0);
    }
  }
}

TEST_CASE("a flipping edit gives zero label loyalty for that record") {
  const auto task = small_task();
  const auto prompts = task_prompts(task, 40);
  bool found = false;
  for (std::uint64_t seed = 0; seed < 10 && !found; ++seed) {
    const auto w = task_model<float>(task, seed, 2);
    const auto r = isolate_and_run(w, prompts, IsolationSpec::first(2, 2));
    for (std::size_t i = 0; i < prompts.size() && !found; ++i) {
      if (r.records[i].base_label == r.records[i].edited_label) continue;
      const auto one = isolate_and_run(w, std::vector<IclPrompt>{prompts[i]}, IsolationSpec::first(2, 2));
      CHECK(one.label_loyalty == 0.0);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("audit log lists top-5 token strings") {
  const auto task = small_task();
  const auto w = task_model<float>(task, 3, 2);
  const auto prompts = task_prompts(task, 3);
  const auto rows = layer_sweep(w, prompts, {1}, "first");
  std::istringstream in(loyalty_audit_jsonl(rows[0], task.tokenizer));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("base_top5").size() == 5);
    CHECK(j.at("edited_top5")[0].is_string());
    ++n;
  }
  CHECK(n == 3);
}

TEST_CASE("beta vector JSON round trip and validation") {
  auto b = BetaVector::zeros(2, 3, 4);
  b.at(1, 2, 3) = 0.5;
  b.at(0, 1, 0) = -1.25;
  const auto back = BetaVector::from_json(b.to_json());
  CHECK(back.values == b.values);
  CHECK(back.n_heads == 3);
  CHECK_THROWS_AS(BetaVector::from_json(R"({"dims":[1,1,2],"values":[0]})"), std::invalid_argument);
}

TEST_CASE("apply_beta: neutrality, exact scaling, and clipping") {
  const auto task = small_task();
  const auto w = task_model<double>(task, 2, 1, 1);
  const auto prompts = task_prompts(task, 10);
  for (const auto& p : prompts) {
    const auto vanilla = forward<double>(w, p.tokens);
    const auto zero = forward<double>(w, p.tokens, apply_beta<double>({}, BetaVector::zeros(1, 1, 2), p));
    CHECK(same_bits(vanilla.logits, zero.logits));
  }
  const auto& p = prompts[0];
  auto beta = BetaVector::zeros(1, 1, 2);
  beta.at(0, 0, 0) = 0.7;
  beta.at(0, 0, 1) = -0.3;
  ForwardOptions opts;
  opts.capture.attention = true;
  const auto base = forward<double>(w, p.tokens, {}, opts);
  const auto scaled = forward<double>(w, p.tokens, apply_beta<double>({}, beta, p), opts);
  for (const auto& a : p.anchors) {
    const double want = std::exp(beta.at(0, 0, a.cls)) * base.trace.at(0, 0).at(p.target, a.position);
    CHECK(std::abs(scaled.trace.at(0, 0).at(p.target, a.position) - want) < 1e-6 * std::max(1.0, want));
  }
  CHECK(scaled.trace.at(0, 0).at(p.target, 0) == base.trace.at(0, 0).at(p.target, 0));

  beta.at(0, 0, 0) = 1e6;
  const auto clipped = apply_beta<double>({}, beta, p);
  CHECK(clipped.anchor_scale->multipliers.data()[0] == std::exp(20.0));
  const auto out = forward<double>(w, p.tokens, clipped);
  for (double v : out.logits.data()) CHECK(std::isfinite(v));

  IclPrompt missing = p;
  missing.anchors.erase(std::remove_if(missing.anchors.begin(), missing.anchors.end(),
                                       [](const Anchor& a) { return a.cls == 1; }),
                        missing.anchors.end());
  CHECK_THROWS_WITH_AS(apply_beta<double>({}, BetaVector::zeros(1, 1, 2), missing), doctest::Contains("class 1"),
                       std::invalid_argument);
}

TEST_CASE("beta gradient matches central differences") {
  const auto task = small_task();
  const auto prompts = task_prompts(task, 3);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto w = task_model<double>(task, seed);
    CounterRng rng(seed, "beta");
    auto beta = BetaVector::zeros(2, 2, 2);
    for (auto& v : beta.values) v = 0.3 * rng.normal();
    const auto& p = prompts[seed];
    const auto [loss, grad] = beta_loss_and_grad(w, p, beta);
    for (std::size_t i = 0; i < beta.values.size(); ++i) {
      const double h = 1e-5;
      auto up = beta, down = beta;
      up.values[i] += h;
      down.values[i] -= h;
      const double fd = (beta_loss_and_grad(w, p, up).first - beta_loss_and_grad(w, p, down).first) / (2 * h);
      CHECK(std::abs(fd - grad.values[i]) <= 1e-5 * std::max({std::abs(fd), std::abs(grad.values[i]), 1e-2}));
    }
  }
}

TEST_CASE("adam: zero gradient is a no-op and the first step is -lr * sign") {
  AdamState<double> adam(ReweightConfig{}.adam);
  Tensor<double> p({3}, {1.0, -2.0, 0.5});
  std::vector<double> zero(3, 0.0);
  adam.step({&p}, {std::span<const double>(zero)});
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);

  AdamState<double> fresh(ReweightConfig{}.adam);
  Tensor<double> q({3}, {1.0, -2.0, 0.5});
  const std::vector<double> g = {0.3, -4.0, 1e-3};
  fresh.step({&q}, {std::span<const double>(g)});
  const double lr = 0.01, eps = 1e-8;
  const double start[] = {1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    // Bias-corrected moments are g and g^2 after one step.
    const double want = start[i] - lr * g[i] / (std::abs(g[i]) + eps);
    CHECK(std::abs(q.data()[i] - want) < 1e-15);
  }
}

TEST_CASE("train_beta: lr 0 keeps beta, reruns are identical, loss decreases") {
  const auto task = small_task();
  const auto w = task_model<float>(task, 6, 2);
  const auto demos = sample_demos(task.train, 2, 1, 1);
  const auto train = sample_demos(task.train, 2, 4, 2);
  const auto prompts = fixed_demo_prompts(task.tpl, task.tokenizer, demos, train, 9, 128);
  for (const auto& p : prompts) CHECK(p.demo_len == prompts[0].demo_len);

  ReweightConfig frozen;
  frozen.adam.lr = 0.0;
  frozen.epochs = 3;
  const auto r0 = train_beta(w, prompts, frozen);
  for (double v : r0.beta.values) CHECK(v == 0.0);
  CHECK(r0.epoch_loss[0] == r0.epoch_loss[2]);

  ReweightConfig cfg;
  const auto a = train_beta(w, prompts, cfg);
  const auto b = train_beta(w, prompts, cfg);
  CHECK(a.beta.values == b.beta.values);
  CHECK(a.epoch_loss.size() == 10);
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());

  const auto test = fixed_demo_prompts(task.tpl, task.tokenizer, demos, task.test, 9, 128);
  const auto vanilla = eval_reweighted(w, BetaVector::zeros(2, 2, 2), test);
  CHECK(vanilla.accuracy == prompt_accuracy(w, test));
  CHECK(vanilla.warnings.empty());
  std::vector<IclPrompt> one_class;
  for (const auto& p : test) {
    if (*p.query_label == 0) one_class.push_back(p);
  }
  const auto degenerate = eval_reweighted(w, a.beta, one_class);
  CHECK(degenerate.warnings.size() == 1);
  CHECK_THROWS_AS(eval_reweighted(w, BetaVector::zeros(3, 2, 2), test), DimensionError);
  // Re-weighting adds no context tokens.
  CHECK(test[0].size() == build_prompt(task.tpl, task.tokenizer, demos, task.test[0], 9, 128).size());
}

TEST_CASE("compression plans") {
  const auto task = small_task();
  const auto w = task_model<double>(task, 8, 2);
  const auto p = task_prompts(task, 1)[0];
  const auto sel = anchor_selection(p);
  CHECK(sel.size() == p.anchors.size() + p.format_positions.size());

  const auto anchor = make_plan(CompressionMethod::kHiddenAnchor, p, w);
  CHECK(anchor.selected == sel);
  CHECK(anchor.states.positions == sel);
  CHECK(anchor.states.per_layer.size() >= 2);
  CHECK(anchor.states.per_layer[0].dim(0) == sel.size());

  const auto r1 = make_plan(CompressionMethod::kHiddenRandom, p, w, 4);
  const auto r2 = make_plan(CompressionMethod::kHiddenRandom, p, w, 4);
  CHECK(r1.selected.size() == sel.size());
  CHECK(r1.selected == r2.selected);
  CHECK(std::is_sorted(r1.selected.begin(), r1.selected.end()));
  for (auto i : r1.selected) CHECK(i < p.demo_len);

  const auto text = make_plan(CompressionMethod::kTextAnchor, p, w);
  REQUIRE(text.context_tokens.size() == sel.size());
  for (std::size_t i = 0; i < sel.size(); ++i) CHECK(text.context_tokens[i] == p.tokens[sel[i]]);

  IclPrompt bare = p;
  bare.anchors.clear();
  bare.format_positions.clear();
  CHECK_THROWS_AS(make_plan(CompressionMethod::kHiddenAnchor, bare, w), std::invalid_argument);
}

TEST_CASE("compressed runs: full selection, empty plan and vanilla") {
  const auto task = small_task();
  const auto prompts = task_prompts(task, 5);
  for (const auto& p : prompts) {
    const auto wd = task_model<double>(task, 11, 2);
    const auto full = forward<double>(wd, p.tokens).logits;
    std::vector<std::size_t> all(p.demo_len);
    std::iota(all.begin(), all.end(), 0);
    const auto plan = make_hidden_plan(p, wd, all);
    const auto got = run_compressed(wd, plan, p.query_tokens());
    const auto want = ops::rows(full, p.demo_len, p.size());
    CHECK(testutil::max_rel_error(got, want, 1.0) < 1e-10);

    const auto wf = task_model<float>(task, 11, 2);
    const auto full_f = forward<float>(wf, p.tokens).logits;
    const auto got_f = run_compressed(wf, make_hidden_plan(p, wf, all), p.query_tokens());
    CHECK(testutil::max_rel_error(got_f, ops::rows(full_f, p.demo_len, p.size()), 1.0) < 1e-5);

    const auto empty = make_hidden_plan(p, wd, {});
    ForwardOptions opts;
    opts.first_position = p.demo_len;
    CHECK(same_bits(run_compressed(wd, empty, p.query_tokens()), forward<double>(wd, p.query_tokens(), {}, opts).logits));

    const auto vanilla = make_plan(CompressionMethod::kVanilla, p, wd);
    CHECK(same_bits(run_compressed(wd, vanilla, p.query_tokens()), want));
  }
}

TEST_CASE("compression plan cache round trip and dimension check") {
  const auto task = small_task();
  const auto w = task_model<float>(task, 2, 2);
  const auto p = task_prompts(task, 1)[0];
  const auto plan = make_plan(CompressionMethod::kHiddenRandom, p, w, 3);
  const auto dir = testutil::temp_dir("plan");
  save_plan(dir, plan);
  const auto back = load_plan<float>(dir);
  CHECK(back.method == plan.method);
  CHECK(back.selected == plan.selected);
  CHECK(back.demo_len == plan.demo_len);
  CHECK(same_bits(run_compressed(w, back, p.query_tokens()), run_compressed(w, plan, p.query_tokens())));

  const auto other = task_model<float>(task, 2, 2, 2, 8);
  CHECK_THROWS_AS(run_compressed(other, plan, p.query_tokens()), DimensionError);
}

TEST_CASE("benchmark report") {
  const auto task = small_task();
  const auto w = task_model<float>(task, 2, 2);
  const auto prompts = task_prompts(task, 8);
  BenchOptions opts;
  opts.repeats = 1;
  const auto rep = benchmark(w, prompts, {CompressionMethod::kVanilla, CompressionMethod::kHiddenAnchor,
                                          CompressionMethod::kTextAnchor, CompressionMethod::kHiddenRandom},
                             opts);
  CHECK(rep.methods[0].label_loyalty == 100.0);
  CHECK(rep.methods[0].word_loyalty == 100.0);
  CHECK(rep.methods[0].speedup == doctest::Approx(1.0));
  double ratio = 0;
  for (const auto& p : prompts) ratio += static_cast<double>(p.size()) / static_cast<double>(p.query_len);
  CHECK(rep.length_ratio == doctest::Approx(ratio / 8));
  CHECK(!rep.warnings.empty());
  const auto csv = parse_csv(bench_csv(rep));
  CHECK(csv.front() == std::vector<std::string>{"method", "label_loyalty", "word_loyalty", "accuracy", "ratio"});
  CHECK(csv.size() == 5);
  const auto timing = parse_csv(bench_timing_csv(rep));
  CHECK(timing.front()[1] == "median_latency_ms");
}
