// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/analysis/compression.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "anchorlab/analysis/intervention.hpp"
#include "anchorlab/harness/csv.hpp"
#include "anchorlab/model/checkpoint.hpp"
#include "anchorlab/parallel.hpp"
#include "anchorlab/rng.hpp"

namespace anchorlab {

std::string to_string(CompressionMethod m) {
  switch (m) {
    case CompressionMethod::kVanilla: return "vanilla";
    case CompressionMethod::kHiddenAnchor: return "hidden_anchor";
    case CompressionMethod::kTextAnchor: return "text_anchor";
    case CompressionMethod::kHiddenRandom: return "hidden_random";
  }
  return "?";
}

CompressionMethod compression_method_from_string(const std::string& s) {
  for (auto m : {CompressionMethod::kVanilla, CompressionMethod::kHiddenAnchor, CompressionMethod::kTextAnchor,
                 CompressionMethod::kHiddenRandom}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown compression method '" + s + "'");
}

std::vector<std::size_t> anchor_selection(const IclPrompt& prompt) {
  std::vector<std::size_t> out = prompt.format_positions;
  for (const auto& a : prompt.anchors) out.push_back(a.position);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <typename T>
CompressionPlan<T> make_hidden_plan(const IclPrompt& prompt, const ModelWeights<T>& w,
                                    const std::vector<std::size_t>& positions) {
  for (auto p : positions) {
    if (p >= prompt.demo_len) throw std::out_of_range("compression: position " + std::to_string(p) + " is outside the demonstrations");
  }
  CompressionPlan<T> plan;
  plan.method = CompressionMethod::kHiddenAnchor;
  plan.selected = positions;
  plan.demo_len = prompt.demo_len;
  if (!positions.empty()) {
    const auto demo = prompt.demo_tokens();
    plan.states = select_states(precompute_prefix_states(w, demo), positions);
  }
  return plan;
}

template <typename T>
CompressionPlan<T> make_plan(CompressionMethod method, const IclPrompt& prompt, const ModelWeights<T>& w,
                             std::uint64_t seed) {
  CompressionPlan<T> plan;
  plan.method = method;
  plan.demo_len = prompt.demo_len;
  plan.seed = seed;
  if (method == CompressionMethod::kVanilla) {
    plan.context_tokens = prompt.demo_tokens();
    return plan;
  }
  const auto anchors = anchor_selection(prompt);
  if (anchors.empty()) throw std::invalid_argument("compression: prompt has no anchors or scaffolding to keep");
  if (method == CompressionMethod::kTextAnchor) {
    for (auto p : anchors) plan.context_tokens.push_back(prompt.tokens[p]);
    return plan;
  }
  std::vector<std::size_t> selection = anchors;
  if (method == CompressionMethod::kHiddenRandom) {
    std::vector<std::size_t> all(prompt.demo_len);
    std::iota(all.begin(), all.end(), 0);
    CounterRng rng(seed, "hidden-random");
    rng.shuffle(all);
    selection.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(anchors.size()));
    std::sort(selection.begin(), selection.end());
  }
  auto hidden = make_hidden_plan(prompt, w, selection);
  hidden.method = method;
  hidden.seed = seed;
  return hidden;
}

template <typename T>
Tensor<T> run_compressed(const ModelWeights<T>& w, const CompressionPlan<T>& plan, std::span<const TokenId> query) {
  if (query.empty()) throw std::invalid_argument("compression: empty query");
  if (!plan.hidden()) {
    std::vector<TokenId> seq(plan.context_tokens);
    seq.insert(seq.end(), query.begin(), query.end());
    const auto logits = forward<T>(w, seq).logits;
    return ops::rows(logits, plan.context_tokens.size(), seq.size());
  }
  for (const auto& s : plan.states.per_layer) {
    if (s.rank() != 2 || s.dim(1) != w.config.d_model) {
      throw DimensionError("compression: cached states " + shape_str(s.shape()) + " do not match d_model " +
                           std::to_string(w.config.d_model));
    }
  }
  HookPlan<T> hooks;
  if (!plan.states.empty()) hooks.prefix = plan.states;
  ForwardOptions opts;
  opts.first_position = plan.demo_len;
  return forward<T>(w, query, hooks, opts).logits;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start < s.size()) {
    auto end = s.find(',', start);
    if (end == std::string::npos) end = s.size();
    out.push_back(std::stoul(s.substr(start, end - start)));
    start = end + 1;
  }
  return out;
}

}  // namespace

template <typename T>
void save_plan(const std::filesystem::path& dir, const CompressionPlan<T>& plan) {
  std::map<std::string, Tensor<T>> tensors;
  for (std::size_t l = 0; l < plan.states.per_layer.size(); ++l) {
    tensors.emplace("layer." + std::to_string(l), plan.states.per_layer[l]);
  }
  std::vector<std::size_t> ctx(plan.context_tokens.begin(), plan.context_tokens.end());
  save_tensor_blob(dir, tensors,
                   {{"method", to_string(plan.method)},
                    {"selected", join(plan.selected)},
                    {"state_positions", join(plan.states.positions)},
                    {"context_tokens", join(ctx)},
                    {"demo_len", std::to_string(plan.demo_len)},
                    {"seed", std::to_string(plan.seed)}});
}

template <typename T>
CompressionPlan<T> load_plan(const std::filesystem::path& dir) {
  std::map<std::string, std::string> meta;
  auto tensors = load_tensor_blob<T>(dir, &meta);
  CompressionPlan<T> plan;
  plan.method = compression_method_from_string(meta.at("method"));
  plan.selected = split(meta.at("selected"));
  plan.states.positions = split(meta.at("state_positions"));
  for (auto t : split(meta.at("context_tokens"))) plan.context_tokens.push_back(static_cast<TokenId>(t));
  plan.demo_len = std::stoul(meta.at("demo_len"));
  plan.seed = std::stoull(meta.at("seed"));
  for (std::size_t l = 0; tensors.count("layer." + std::to_string(l)); ++l) {
    plan.states.per_layer.push_back(tensors.at("layer." + std::to_string(l)));
  }
  return plan;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

template <typename T>
BenchReport benchmark(const ModelWeights<T>& w, const std::vector<IclPrompt>& prompts,
                      const std::vector<CompressionMethod>& methods, const BenchOptions& options) {
  if (prompts.empty()) throw std::invalid_argument("benchmark: no prompts");
  BenchReport report;
  if (prompts.size() < 20) report.warnings.push_back("fewer than 20 prompts; latency estimates are unstable");
  const std::size_t n = prompts.size();
  for (const auto& p : prompts) {
    report.length_ratio += static_cast<double>(p.demo_len + p.query_len) / static_cast<double>(p.query_len);
  }
  report.length_ratio /= static_cast<double>(n);

  struct Outcome {
    std::size_t label = 0;
    std::vector<T> logits;
  };
  auto run_method = [&](CompressionMethod m, std::vector<Outcome>& out) {
    out.assign(n, {});
    parallel_for(n, [&](std::size_t i) {
      const auto& p = prompts[i];
      const auto plan = make_plan(m, p, w, options.seed + i);
      const auto logits = run_compressed(w, plan, p.query_tokens());
      const auto row = logits.dim(0) - 1;
      out[i].label = predict_label(logits, row, p.label_ids);
      const auto v = logits.dim(1);
      out[i].logits.assign(logits.data().begin() + row * v, logits.data().begin() + (row + 1) * v);
    });
  };

  std::vector<Outcome> vanilla;
  run_method(CompressionMethod::kVanilla, vanilla);
  double vanilla_latency = 0.0;
  for (auto m : methods) {
    MethodReport r;
    r.method = m;
    std::vector<Outcome> outcome;
    if (m == CompressionMethod::kVanilla) {
      outcome = vanilla;
    } else {
      run_method(m, outcome);
    }
    double same = 0.0, jac = 0.0, correct = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      same += outcome[i].label == vanilla[i].label;
      jac += jaccard_top5<T>(vanilla[i].logits, outcome[i].logits);
      if (prompts[i].query_label) correct += outcome[i].label == *prompts[i].query_label;
    }
    r.label_loyalty = 100.0 * same / static_cast<double>(n);
    r.word_loyalty = 100.0 * jac / static_cast<double>(n);
    r.accuracy = correct / static_cast<double>(n);

    if (options.time) {
      std::vector<CompressionPlan<T>> plans;
      plans.reserve(n);
      for (std::size_t i = 0; i < n; ++i) plans.push_back(make_plan(m, prompts[i], w, options.seed + i));
      std::vector<double> times;
      for (std::size_t rep = 0; rep < std::max<std::size_t>(1, options.repeats); ++rep) {
        for (std::size_t i = 0; i < n; ++i) {
          const auto query = prompts[i].query_tokens();
          const auto t0 = std::chrono::steady_clock::now();
          const auto logits = run_compressed(w, plans[i], query);
          const auto t1 = std::chrono::steady_clock::now();
          times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
      }
      r.median_latency_ms = median(times);
      double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
      double var = 0.0;
      for (double t : times) var += (t - mean) * (t - mean);
      r.latency_stddev_ms = std::sqrt(var / static_cast<double>(times.size()));
      r.noisy = r.latency_stddev_ms > 0.5 * r.median_latency_ms;
      if (r.noisy) report.warnings.push_back("latency of " + to_string(m) + " varies by more than 50% of its median");
      if (m == CompressionMethod::kVanilla) vanilla_latency = r.median_latency_ms;
    }
    report.methods.push_back(r);
  }
  if (options.time) {
    if (vanilla_latency == 0.0) {
      std::vector<double> times;
      for (std::size_t i = 0; i < n; ++i) {
        const auto plan = make_plan(CompressionMethod::kVanilla, prompts[i], w, 0);
        const auto query = prompts[i].query_tokens();
        const auto t0 = std::chrono::steady_clock::now();
        const auto logits = run_compressed(w, plan, query);
        times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      }
      vanilla_latency = median(times);
    }
    for (auto& r : report.methods) r.speedup = r.median_latency_ms > 0 ? vanilla_latency / r.median_latency_ms : 0.0;
  }
  return report;
}

std::string bench_csv(const BenchReport& report) {
  CsvWriter csv({"method", "label_loyalty", "word_loyalty", "accuracy", "ratio"});
  for (const auto& r : report.methods) {
    csv.row({to_string(r.method), csv_number(r.label_loyalty), csv_number(r.word_loyalty), csv_number(r.accuracy),
             csv_number(report.length_ratio)});
  }
  return csv.str();
}

std::string bench_timing_csv(const BenchReport& report) {
  CsvWriter csv({"method", "median_latency_ms", "speedup", "ratio", "noisy"});
  for (const auto& r : report.methods) {
    csv.row({to_string(r.method), csv_number(r.median_latency_ms), csv_number(r.speedup),
             csv_number(report.length_ratio), r.noisy ? "true" : "false"});
  }
  return csv.str();
}

#define ANCHORLAB_INSTANTIATE_COMPRESSION(T)                                                                       \
  template CompressionPlan<T> make_plan(CompressionMethod, const IclPrompt&, const ModelWeights<T>&, std::uint64_t); \
  template CompressionPlan<T> make_hidden_plan(const IclPrompt&, const ModelWeights<T>&,                           \
                                               const std::vector<std::size_t>&);                                   \
  template Tensor<T> run_compressed(const ModelWeights<T>&, const CompressionPlan<T>&, std::span<const TokenId>);  \
  template void save_plan(const std::filesystem::path&, const CompressionPlan<T>&);                                \
  template CompressionPlan<T> load_plan(const std::filesystem::path&);                                             \
  template BenchReport benchmark(const ModelWeights<T>&, const std::vector<IclPrompt>&,                           \
                                 const std::vector<CompressionMethod>&, const BenchOptions&);

ANCHORLAB_INSTANTIATE_COMPRESSION(float)
ANCHORLAB_INSTANTIATE_COMPRESSION(double)

}  // namespace anchorlab
