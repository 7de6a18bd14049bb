// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate. One PASS/FAIL line per criterion; exit status 1 if any fail.

#include <Eigen/Dense>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "anchorlab/analysis/auc.hpp"
#include "anchorlab/analysis/diagnosis.hpp"
#include "anchorlab/analysis/flow.hpp"
#include "anchorlab/analysis/reweight.hpp"
#include "anchorlab/harness/run.hpp"
#include "anchorlab/model/checkpoint.hpp"
#include "anchorlab/parallel.hpp"
#include "helpers.hpp"
#include "model_helpers.hpp"

using namespace anchorlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int g_failed = 0;

void report_line(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failed;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void run_criterion(const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report_line(false, name, std::string("threw: ") + e.what());
  }
}

// Relative error with an absolute floor below which differences are compared
// absolutely.
constexpr double kGradFloor = 1e-6;
constexpr double kStep = 1e-3;

// Fourth-order central difference.
double derivative(const std::function<double(double)>& f) {
  const double h = kStep;
  return (8.0 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12.0 * h);
}

void gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto task = testutil::small_task();
  double worst_attn = 0.0, worst_beta = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = testutil::task_model<double>(task, 100 + seed, 2, 2, 32);
    const auto p = testutil::task_prompts(task, 1, 1, seed)[0];
    const std::size_t label = *p.query_label;
    const auto trace = saliency_trace(w, p, label);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t hd = 0; hd < 2; ++hd) {
        const auto& g = trace.grads.at(l * 2 + hd);
        for (std::size_t i = 0; i < p.size(); ++i) {
          for (std::size_t j = 0; j <= i; ++j) {
            auto loss_at = [&](double d) {
              HookPlan<double> plan;
              plan.deltas.push_back({l, hd, i, j, d});
              return label_loss(forward<double>(w, p.tokens, plan).logits, p, p.target, label).item();
            };
            const double fd = derivative(loss_at);
            worst_attn = std::max(worst_attn, testutil::rel_error(g.at(i, j), fd, kGradFloor));
            ++checked;
          }
        }
      }
    }
    CounterRng rng(seed, "beta-oracle");
    auto beta = BetaVector::zeros(2, 2, p.n_classes());
    for (auto& v : beta.values) v = 0.5 * rng.normal();
    const auto [loss, grad] = beta_loss_and_grad(w, p, beta);
    for (std::size_t i = 0; i < beta.values.size(); ++i) {
      const double fd = derivative([&](double d) {
        auto shifted = beta;
        shifted.values[i] += d;
        return beta_loss_and_grad(w, p, shifted).first;
      });
      worst_beta = std::max(worst_beta, testutil::rel_error(grad.values[i], fd, kGradFloor));
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  report_line(worst_attn < 1e-5 && worst_beta < 1e-5 && secs < 120, "gradient oracle",
              fmt("%zu entries, max rel err dL/dA %.2e, dL/dbeta %.2e (tol 1e-5), %.1fs (limit 120s)", checked,
                  worst_attn, worst_beta, secs));
}

template <typename T>
double prefix_worst(std::size_t n_prompts) {
  const auto task = testutil::small_task();
  const auto w = testutil::task_model<T>(task, 77, 2, 2, 32);
  const auto prompts = testutil::task_prompts(task, n_prompts, 1, 5);
  std::vector<double> worst(prompts.size(), 0.0);
  parallel_for(prompts.size(), [&](std::size_t n) {
    const auto& p = prompts[n];
    const auto full = forward<T>(w, p.tokens).logits;
    const std::span<const TokenId> toks(p.tokens);
    for (std::size_t split = 1; split < p.size(); ++split) {
      HookPlan<T> plan;
      plan.prefix = precompute_prefix_states(w, toks.subspan(0, split));
      ForwardOptions opts;
      opts.first_position = split;
      const auto tail = forward<T>(w, toks.subspan(split), plan, opts).logits;
      const auto want = ops::rows(full, split, p.size());
      for (std::size_t k = 0; k < tail.numel(); ++k) {
        const double a = tail.data()[k], b = want.data()[k];
        worst[n] = std::max(worst[n], std::abs(a - b) / std::max(1.0, std::abs(b)));
      }
    }
  });
  return *std::max_element(worst.begin(), worst.end());
}

void prefix_exactness() {
  const double f32 = prefix_worst<float>(50);
  const double f64 = prefix_worst<double>(50);
  report_line(f32 <= 1e-5 && f64 <= 1e-10, "prefix-cache exactness",
              fmt("50 prompts x every split, max err f32 %.2e (tol 1e-5), f64 %.2e (tol 1e-10)", f32, f64));
}

void auc_oracle() {
  std::size_t mismatches = 0;
  for (std::uint64_t inst = 0; inst < 1000; ++inst) {
    CounterRng rng(inst, "auc-oracle");
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> scores(n);
    std::vector<bool> pos(n);
    // Coarse scores force ties.
    const std::size_t levels = 1 + rng.below(10);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(levels));
      pos[i] = rng.uniform() < 0.5;
    }
    pos[0] = true;
    pos[1] = false;
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!pos[i] || pos[j]) continue;
        pairs += 1;
        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
    }
    if (auc_roc(scores, pos) != wins / pairs) ++mismatches;
  }
  report_line(mismatches == 0, "AUC oracle", fmt("%zu of 1000 instances differ from pair counting", mismatches));
}

void accumulate_check() {
  const auto r = accumulate_r({0.5, 0.75, 1.0});
  const bool exact = r == std::vector<double>{0.0, 1.0 / 3.0, 1.0};
  std::size_t bad = 0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    CounterRng rng(k, "curve");
    std::vector<double> c(1 + rng.below(48));
    for (auto& v : c) v = rng.uniform();
    c[0] = 0.9;
    if (accumulate_r(c).back() != 1.0) ++bad;
  }
  report_line(exact && bad == 0, "cumulative share",
              fmt("example %s, %zu of 100 random curves end below 1", exact ? "exact" : "wrong", bad));
}

void neutrality(const ModelWeights<float>& w, const std::vector<IclPrompt>& prompts) {
  std::size_t differ = 0;
  for (const auto& p : prompts) {
    const auto vanilla = forward<float>(w, p.tokens).logits;
    const auto empty = forward<float>(w, p.tokens, HookPlan<float>{}).logits;
    const auto zero =
        forward<float>(w, p.tokens, apply_beta<float>({}, BetaVector::zeros(w.config.n_layers, w.config.n_heads, p.n_classes()), p))
            .logits;
    auto same = [&](const Tensor<float>& t) {
      return std::equal(t.data().begin(), t.data().end(), vanilla.data().begin(), vanilla.data().end());
    };
    differ += !same(empty) + !same(zero);
  }
  report_line(differ == 0, "neutrality",
              fmt("%zu prompts, %zu runs not bit-identical to vanilla", prompts.size(), differ));
}

void flow_sets() {
  std::size_t bad = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    CounterRng rng(k, "flow-sets");
    const std::size_t T = 3 + rng.below(40);
    const std::size_t target = 2 + rng.below(T - 2);
    std::vector<std::size_t> pool(target - 1);
    std::iota(pool.begin(), pool.end(), 1);
    rng.shuffle(pool);
    pool.resize(1 + rng.below(std::min<std::size_t>(pool.size(), 6)));
    const std::set<std::size_t> anchors(pool.begin(), pool.end());
    FlowIndexSets want;
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (anchors.count(i)) {
          want.wp.push_back({i, j});
        } else if (i == target && anchors.count(j)) {
          want.pq.push_back({i, j});
        } else {
          want.ww.push_back({i, j});
        }
      }
    }
    const auto got = flow_index_sets(T, pool, target);
    std::set<IndexPair> all;
    for (const auto* s : {&got.wp, &got.pq, &got.ww}) all.insert(s->begin(), s->end());
    const bool partition = all.size() == T * (T - 1) / 2 && got.wp.size() + got.pq.size() + got.ww.size() == all.size();
    if (got.wp != want.wp || got.pq != want.pq || got.ww != want.ww || !partition) ++bad;
  }
  report_line(bad == 0, "flow index sets", fmt("%zu of 1000 configurations disagree with enumeration", bad));
}

// Sequential variance maximization: each direction is the unit vector of
// largest variance orthogonal to the previous ones, found by power iteration
// on the deflated covariance.
Eigen::MatrixXd sequential_directions(const Eigen::MatrixXd& q, std::size_t m) {
  const Eigen::MatrixXd centered = q.rowwise() - q.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(q.rows());
  Eigen::MatrixXd out(m, q.cols());
  for (std::size_t k = 0; k < m; ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(q.cols(), 1.0, 2.0).normalized();
    for (int it = 0; it < 200000; ++it) {
      const Eigen::VectorXd next = (cov * v).normalized();
      const double change = (next - v).norm();
      v = next;
      if (change < 1e-15) break;
    }
    out.row(k) = v.transpose();
    cov -= v.dot(cov * v) * v * v.transpose();
  }
  return out;
}

void khat_oracle() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    CounterRng rng(k, "khat-oracle");
    Eigen::MatrixXd q(50, 16);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      for (Eigen::Index j = 0; j < q.cols(); ++j) q(i, j) = rng.normal() * (1.0 + 0.6 * static_cast<double>(16 - j));
    }
    Eigen::MatrixXd r(16, 16);
    for (Eigen::Index i = 0; i < 16; ++i) {
      for (Eigen::Index j = 0; j < 16; ++j) r(i, j) = rng.normal();
    }
    const Eigen::MatrixXd rot = Eigen::HouseholderQR<Eigen::MatrixXd>(r).householderQ();
    q = q * rot;
    Eigen::MatrixXd keys(3, 16);
    for (Eigen::Index i = 0; i < keys.size(); ++i) keys(i) = rng.normal();
    const auto h = khat_from_vectors(q, keys, 5);
    const auto want = sequential_directions(q, 5);
    for (Eigen::Index i = 0; i < 5; ++i) {
      const double same = (h.directions.row(i) - want.row(i)).cwiseAbs().maxCoeff();
      const double flipped = (h.directions.row(i) + want.row(i)).cwiseAbs().maxCoeff();
      worst = std::max(worst, std::min(same, flipped));
    }
  }
  report_line(worst <= 1e-8, "khat oracle",
              fmt("100 instances T=50 d=16 M=5, max direction error %.2e (tol 1e-8)", worst));
}

json summary_of(const RunManifest& m) {
  std::ifstream in(m.dir / "summary.json");
  return json::parse(in).at("results");
}

void directional(const fs::path& toy, const fs::path& scratch) {
  RunConfig base;
  base.checkpoint = toy;
  base.output_dir = scratch / "directional";
  auto run = [&](const std::string& kind, json params = json::object()) {
    RunConfig c = base;
    c.experiment = kind;
    c.params = std::move(params);
    return summary_of(run_experiment(c));
  };
  const char* note = "published GPT2-XL reference, not comparable";

  run_criterion("directional (a) isolation", [&] {
    const auto s = run("isolate");
    const double first = s.at("first_label_loyalty"), last = s.at("last_label_loyalty");
    report_line(first < last, "directional (a) isolation",
                fmt("label loyalty first-5 %.2f < last-5 %.2f [%s: 44.03 vs 99.61]", first, last, note));
  });
  run_criterion("directional (b) auc", [&] {
    const auto s = run("auc");
    const double lo = s.at("auc_first_quartile"), hi = s.at("auc_last_quartile"), r = s.at("r_at_quarter");
    report_line(hi > lo && r < 0.3, "directional (b) auc",
                fmt("AUC deepest quartile %.3f > shallowest %.3f, R at N/4 %.3f < 0.3 [%s: deep-layer AUC about 0.8]",
                    hi, lo, r, note));
  });
  run_criterion("directional (c) compression loyalty", [&] {
    const auto s = run("compress", {{"time", false}});
    const double ha = s.at("hidden_anchor").at("label_loyalty"), hr = s.at("hidden_random").at("label_loyalty"),
                 ta = s.at("text_anchor").at("label_loyalty");
    report_line(ha > hr && ha > ta, "directional (c) compression loyalty",
                fmt("hidden_anchor %.2f > hidden_random %.2f and > text_anchor %.2f [%s: 79.47, 44.25, 51.05]", ha, hr,
                    ta, note));
  });
  run_criterion("directional (d) reweighting", [&] {
    const auto s = run("reweight");
    const double van = s.at("vanilla_accuracy"), rew = s.at("reweighted_accuracy");
    report_line(rew >= van, "directional (d) reweighting",
                fmt("trained beta accuracy %.4f >= vanilla 1-shot %.4f [%s: 68.64 vs 51.90]", rew, van, note));
  });
  run_criterion("directional (e) speedup", [&] {
    RunConfig c = base;
    c.experiment = "compress";
    c.seeds = {0};
    c.n_test = 200;
    c.params = {{"ratio_shots", {1, 2, 4}}, {"repeats", 5}};
    const auto m = run_experiment(c);
    std::ifstream in(m.dir / "timing.json");
    const auto rows = json::parse(in).at("speedup_by_ratio");
    bool increasing = true;
    std::string detail;
    double prev = 0.0;
    for (const auto& r : rows) {
      const double sp = r.at("speedup");
      if (!detail.empty()) increasing = increasing && sp > prev;
      detail += fmt("%sratio %.2f -> %.2fx", detail.empty() ? "" : ", ", r.at("ratio").get<double>(), sp);
      prev = sp;
    }
    report_line(increasing, "directional (e) speedup",
                detail + fmt(" [%s: 1.1x to 2.5x over ratios 1.9 to 9.7]", note));
  });
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void cli_determinism(const fs::path& toy, const fs::path& scratch) {
  std::size_t compared = 0, differ = 0;
  std::string problems;
  for (const auto& kind : experiment_kinds()) {
    std::vector<fs::path> dirs;
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = scratch / "determinism" / (kind + std::to_string(rep));
      std::string cmd = std::string(ANCHORLAB_CLI) + " " + kind;
      cmd += " --checkpoint " + toy.string() + " --seeds 0,1 --n-test 40 --out " + out.string();
      if (kind == "compress") cmd += " --param repeats=1";
      if (kind == "reweight") cmd += " --param epochs=3";
      cmd += " > /dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        problems += " " + kind + " exited non-zero;";
        break;
      }
      for (const auto& e : fs::directory_iterator(out)) dirs.push_back(e.path());
    }
    if (dirs.size() != 2) {
      ++differ;
      continue;
    }
    const auto a = RunManifest::load(dirs[0]);
    for (const auto& f : a.files) {
      if (!f.aggregate) continue;
      ++compared;
      if (slurp(dirs[0] / f.name) != slurp(dirs[1] / f.name)) {
        ++differ;
        problems += " " + kind + "/" + f.name + ";";
      }
    }
  }
  report_line(differ == 0 && compared > 0, "CLI determinism",
              fmt("%zu aggregate files compared across reruns of every experiment, %zu differ", compared, differ) +
                  problems);
}

}  // namespace

int main() {
  const fs::path toy = fs::path(ANCHORLAB_SOURCE_DIR) / "data" / "toy";
  const fs::path scratch = fs::temp_directory_path() / "anchorlab-acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  run_criterion("gradient oracle", gradient_oracle);
  run_criterion("prefix-cache exactness", prefix_exactness);
  run_criterion("AUC oracle", auc_oracle);
  run_criterion("cumulative share", accumulate_check);
  run_criterion("neutrality", [&] {
    const auto w = ModelWeights<float>::from_checkpoint(load_checkpoint<float>(toy));
    const auto task = gen_synthetic_task(task_spec_from_meta(load_checkpoint<float>(toy).meta));
    neutrality(w, task_eval_prompts(task, 100, 1, 3, w.config.max_seq_len));
  });
  run_criterion("flow index sets", flow_sets);
  run_criterion("khat oracle", khat_oracle);
  directional(toy, scratch);
  run_criterion("CLI determinism", [&] { cli_determinism(toy, scratch); });

  std::printf("%d criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
