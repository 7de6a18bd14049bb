// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "anchorlab/harness/hash.hpp"
#include "anchorlab/model/train.hpp"
#include "anchorlab/model/transformer.hpp"
#include "helpers.hpp"
#include "model_helpers.hpp"

using namespace anchorlab;
namespace fs = std::filesystem;

using namespace testutil;

TEST_CASE("trace rows sum to one over the causal support") {
  const auto w = tiny_model<float>(1);
  ForwardOptions opts;
  opts.capture.attention = true;
  const auto res = forward<float>(w, random_tokens(12, 2), {}, opts);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      const auto& a = res.trace.at(l, h);
      for (std::size_t r = 0; r < 12; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 12; ++c) {
          s += a.at(r, c);
          if (c > r) CHECK(a.at(r, c) == 0.0f);
        }
        CHECK(std::abs(s - 1) < 1e-6);
      }
    }
  }
}

TEST_CASE("zero edges read back as exact zeros") {
  const auto w = tiny_model<float>(3);
  const auto toks = random_tokens(10, 4);
  HookPlan<float> plan;
  for (std::size_t p = 1; p < 10; ++p) plan.zero_edges.push_back({1, p, 0, p, std::nullopt});
  ForwardOptions opts;
  opts.capture.attention = true;
  const auto res = forward<float>(w, toks, plan, opts);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t p = 1; p < 10; ++p) {
      for (std::size_t i = 0; i < p; ++i) CHECK(res.trace.at(1, h).at(p, i) == 0.0f);
    }
  }
  plan.renormalize_zeroed = true;
  const auto renorm = forward<float>(w, toks, plan, opts);
  CHECK(renorm.trace.at(1, 0).at(4, 4) == 1.0f);
}

TEST_CASE("forward is deterministic and capture does not perturb logits") {
  const auto w = tiny_model<float>(5);
  const auto toks = random_tokens(15, 6);
  const auto a = forward<float>(w, toks);
  const auto b = forward<float>(w, toks);
  ForwardOptions opts;
  opts.capture = {true, true, true};
  const auto c = forward<float>(w, toks, {}, opts);
  CHECK(std::equal(a.logits.data().begin(), a.logits.data().end(), b.logits.data().begin()));
  CHECK(std::equal(a.logits.data().begin(), a.logits.data().end(), c.logits.data().begin()));
  CHECK(c.hidden.size() == 3);
  CHECK(c.trace.queries.size() == 4);
}

TEST_CASE("forward errors") {
  const auto w = tiny_model<float>(5);
  CHECK_THROWS_AS(forward<float>(w, random_tokens(41, 1)), std::length_error);
  HookPlan<float> bad;
  bad.zero_edges.push_back({7, 1, 0, 1, std::nullopt});
  CHECK_THROWS(forward<float>(w, random_tokens(5, 1), bad));
  HookPlan<float> bad_row;
  bad_row.zero_edges.push_back({0, 9, 0, 1, std::nullopt});
  CHECK_THROWS(forward<float>(w, random_tokens(5, 1), bad_row));
  HookPlan<float> bad_scale;
  bad_scale.anchor_scale = AnchorScale<float>{4, {{1, 0}}, Tensor<float>::full({2, 2, 1}, -1.0f)};
  CHECK_THROWS(forward<float>(w, random_tokens(5, 1), bad_scale));
}

TEST_CASE("causality: later tokens do not change earlier logits") {
  const auto w = tiny_model<double>(7, 3);
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto toks = random_tokens(14, s);
    const auto base = forward<double>(w, toks);
    const std::size_t t = 3 + s % 9;
    for (std::size_t j = t + 1; j < toks.size(); ++j) toks[j] = (toks[j] + 5) % 20;
    const auto mut = forward<double>(w, toks);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t v = 0; v < 20; ++v) CHECK(base.logits.at(r, v) == mut.logits.at(r, v));
    }
  }
}

TEST_CASE("hook neutrality") {
  const auto w = tiny_model<float>(8);
  const auto p = manual_prompt(12, 9);
  const auto base = forward<float>(w, p.tokens);
  const auto empty = forward<float>(w, p.tokens, HookPlan<float>{});
  HookPlan<float> ones;
  ones.anchor_scale = AnchorScale<float>{p.target, p.anchors, Tensor<float>::full({2, 2, 2}, 1.0f)};
  const auto scaled = forward<float>(w, p.tokens, ones);
  CHECK(std::equal(base.logits.data().begin(), base.logits.data().end(), empty.logits.data().begin()));
  CHECK(std::equal(base.logits.data().begin(), base.logits.data().end(), scaled.logits.data().begin()));
}

TEST_CASE("anchor scale multiplies exactly the target-anchor entries") {
  const auto w = tiny_model<double>(10, 1, 1);
  const auto p = manual_prompt(9, 11);
  ForwardOptions opts;
  opts.capture.attention = true;
  const auto base = forward<double>(w, p.tokens, {}, opts);
  HookPlan<double> plan;
  plan.anchor_scale = AnchorScale<double>{p.target, p.anchors, Tensor<double>({1, 1, 2}, {std::exp(0.7), std::exp(-1.3)})};
  const auto edited = forward<double>(w, p.tokens, plan, opts);
  const auto& a = base.trace.at(0, 0);
  const auto& b = edited.trace.at(0, 0);
  for (std::size_t r = 0; r < 9; ++r) {
    for (std::size_t c = 0; c < 9; ++c) {
      double want = a.at(r, c);
      if (r == p.target && c == p.anchors[0].position) want *= std::exp(0.7);
      if (r == p.target && c == p.anchors[1].position) want *= std::exp(-1.3);
      CHECK(std::abs(b.at(r, c) - want) <= 1e-6 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("saliency equals |A * dL/dA| against finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto w = tiny_model<double>(20 + seed, 1, 1);
    const auto p = manual_prompt(8, 30 + seed);
    const auto sal = forward_with_saliency(w, p, *p.query_label);
    REQUIRE(sal.size() == 1);
    ForwardOptions opts;
    opts.capture.attention = true;
    const auto base = forward<double>(w, p.tokens, {}, opts);
    const double h = 1e-5;
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        auto loss_at = [&](double d) {
          HookPlan<double> plan;
          plan.deltas.push_back({0, 0, i, j, d});
          const auto r = forward<double>(w, p.tokens, plan);
          return label_loss(r.logits, p, p.target, *p.query_label).item();
        };
        const double g = (loss_at(h) - loss_at(-h)) / (2 * h);
        const double want = std::abs(base.trace.at(0, 0).at(i, j) * g);
        CHECK(testutil::rel_error(sal[0].at(i, j), want, 1e-6) < 1e-4);
      }
    }
  }
}

TEST_CASE("saliency is causal and nonnegative") {
  const auto w = tiny_model<float>(40, 3);
  const auto p = manual_prompt(16, 41);
  const auto sal = forward_with_saliency(w, p, 0);
  CHECK(sal.size() == 3);
  for (const auto& m : sal) {
    for (std::size_t i = 0; i < 16; ++i) {
      for (std::size_t j = 0; j < 16; ++j) {
        CHECK(m.at(i, j) >= 0.0f);
        if (j > i) CHECK(m.at(i, j) == 0.0f);
      }
    }
  }
}

TEST_CASE("prefix states") {
  const auto w = tiny_model<double>(50, 3);
  CHECK(precompute_prefix_states<double>(w, std::vector<TokenId>{}).empty());
  const auto toks = random_tokens(12, 51);
  ForwardOptions cap;
  cap.capture.hidden = true;
  const auto full = forward<double>(w, toks, {}, cap);
  const auto states = precompute_prefix_states<double>(w, toks);
  REQUIRE(states.per_layer.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(std::equal(states.per_layer[l].data().begin(), states.per_layer[l].data().end(),
                     full.hidden[l].data().begin()));
  }
  const auto sub = select_states(states, {1, 4, 9});
  CHECK(sub.positions == std::vector<std::size_t>{1, 4, 9});
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(sub.per_layer[l].at(1, 3) == states.per_layer[l].at(4, 3));
    CHECK(sub.per_layer[l].at(2, 0) == states.per_layer[l].at(9, 0));
  }
  CHECK_THROWS(select_states(states, {20}));
}

TEST_CASE("prefix injection reproduces the full forward at every split") {
  auto check = [](auto tag, double tol) {
    using T = decltype(tag);
    const auto w = tiny_model<T>(60, 2);
    const auto toks = random_tokens(14, 61);
    const auto full = forward<T>(w, toks);
    for (std::size_t s = 1; s < toks.size(); ++s) {
      const std::vector<TokenId> head(toks.begin(), toks.begin() + static_cast<std::ptrdiff_t>(s));
      const std::vector<TokenId> tail(toks.begin() + static_cast<std::ptrdiff_t>(s), toks.end());
      HookPlan<T> plan;
      plan.prefix = precompute_prefix_states<T>(w, head);
      ForwardOptions opts;
      opts.first_position = s;
      const auto part = forward<T>(w, tail, plan, opts);
      double worst = 0;
      for (std::size_t r = 0; r < tail.size(); ++r)
        for (std::size_t v = 0; v < 20; ++v)
          worst = std::max(worst, std::abs(double(part.logits.at(r, v)) - double(full.logits.at(s + r, v))));
      CHECK(worst <= tol);
    }
  };
  check(float{}, 1e-5);
  check(double{}, 1e-10);
}

TEST_CASE("checkpoint round trip and container errors") {
  const auto w = tiny_model<float>(70);
  auto ck = w.to_checkpoint({{"seed", "70"}});
  const auto dir = temp_dir("ckpt");
  save_checkpoint(ck, dir);
  const auto back = load_checkpoint<float>(dir);
  CHECK(back.config == ck.config);
  CHECK(back.meta == ck.meta);
  CHECK(tensors_hash(back.tensors) == tensors_hash(ck.tensors));

  // Unknown tensors load with a warning.
  auto extra = ck;
  extra.tensors.emplace("future.tensor", Tensor<float>::zeros({3}));
  const auto dir2 = temp_dir("ckpt-extra");
  save_checkpoint(extra, dir2);
  std::vector<std::string> warnings;
  CHECK_NOTHROW(load_checkpoint<float>(dir2, &warnings));
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("future.tensor") != std::string::npos);

  // Truncation names expected and actual sizes.
  const auto bin = dir / "tensors.bin";
  const auto size = fs::file_size(bin);
  fs::resize_file(bin, size - 10);
  try {
    load_checkpoint<float>(dir);
    FAIL("expected truncation error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(std::to_string(size)) != std::string::npos);
    CHECK(msg.find(std::to_string(size - 10)) != std::string::npos);
  }

  // Bad magic.
  {
    std::ifstream in(dir2 / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    text.replace(text.find("ANCHORLAB-CKPT"), 14, "SOMETHING-ELSE");
    std::ofstream(dir2 / "manifest.json") << text;
  }
  CHECK_THROWS_WITH_AS(load_checkpoint<float>(dir2), doctest::Contains("magic"), std::runtime_error);

  // Missing tensor and wrong shape.
  auto missing = ck;
  missing.tensors.erase("ln_f.bias");
  CHECK_THROWS_WITH_AS(missing.validate(), doctest::Contains("ln_f.bias"), std::runtime_error);
  auto wrong = ck;
  wrong.tensors.insert_or_assign("wpe", Tensor<float>::zeros({3, 16}));
  CHECK_THROWS_WITH_AS(wrong.validate(), doctest::Contains("wpe"), std::runtime_error);
}

TEST_CASE("f32 checkpoint loads as f64") {
  const auto w = tiny_model<float>(71);
  const auto dir = temp_dir("ckpt-kind");
  save_checkpoint(w.to_checkpoint(), dir);
  const auto d = load_checkpoint<double>(dir);
  CHECK(d.at("wte").at(3) == static_cast<double>(w.wte.at(3)));
}

TEST_CASE("train_toy: determinism, lr = 0, divergence") {
  TaskSpec spec;
  spec.n_train = 64;
  spec.n_test = 8;
  spec.vocab_size = 12;
  const auto task = gen_synthetic_task(spec);
  ModelConfig cfg = tiny_config(2, 2);
  cfg.max_seq_len = 96;
  ToyRecipe r;
  r.steps = 3;
  r.batch = 2;
  r.eval_prompts = 4;
  const auto a = train_toy<float>(task, cfg, r);
  const auto b = train_toy<float>(task, cfg, r);
  CHECK(tensors_hash(a.tensors) == tensors_hash(b.tensors));
  CHECK(a.meta.count("final_loss") == 1);
  CHECK(a.meta.count("eval_accuracy") == 1);
  CHECK(task_spec_from_meta(a.meta).vocab_size == 12);

  ToyRecipe frozen = r;
  frozen.adam.lr = 0.0;
  const auto c = train_toy<float>(task, cfg, frozen);
  cfg.vocab_size = task.tokenizer.size();
  const auto init = init_weights<float>(cfg, r.init_std, r.seed).to_checkpoint();
  CHECK(tensors_hash(c.tensors) == tensors_hash(init.tensors));

  ToyRecipe wild = r;
  wild.steps = 50;
  wild.warmup = 0;
  wild.adam.lr = 1e30;
  wild.adam.weight_decay = 0;
  CHECK_THROWS_WITH_AS(train_toy<float>(task, cfg, wild), doctest::Contains("step"), std::runtime_error);
}
