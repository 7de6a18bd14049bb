// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "anchorlab/corpus/synthetic.hpp"
#include "anchorlab/harness/csv.hpp"
#include "anchorlab/harness/run.hpp"
#include "anchorlab/model/checkpoint.hpp"
#include "anchorlab/model/reference.hpp"
#include "anchorlab/model/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anchorlab;

namespace {

struct TaskFlags {
  std::string kind = "keyed-sentiment";
  TaskSpec spec;

  void add(CLI::App* app) {
    app->add_option("--kind", kind, "keyed-sentiment | pattern-topic | emotion-lexicon")->capture_default_str();
    app->add_option("--classes", spec.n_classes, "class count")->capture_default_str();
    app->add_option("--vocab", spec.vocab_size, "content words (cues plus fillers)")->capture_default_str();
    app->add_option("--n-train", spec.n_train)->capture_default_str();
    app->add_option("--n-test", spec.n_test)->capture_default_str();
    app->add_option("--task-seed", spec.seed)->capture_default_str();
    app->add_option("--shared-cue-rate", spec.shared_cue_rate, "plants a confusable pair among the last two classes")
        ->capture_default_str();
  }
  TaskSpec get() const {
    TaskSpec s = spec;
    s.kind = task_kind_from_string(kind);
    return s;
  }
};

/// Experiment flags layered over an optional JSON config file.
struct ExperimentFlags {
  std::string config_file;
  std::string checkpoint, dtype, out, tpl, tokenizer, demos, test;
  std::vector<std::uint64_t> seeds;
  std::size_t n_test = 0, shots = 0;
  std::vector<std::string> params;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "JSON run config");
    app->add_option("--checkpoint", checkpoint, "checkpoint directory");
    app->add_option("--seeds", seeds, "seed list")->delimiter(',');
    app->add_option("--n-test", n_test, "queries per seed");
    app->add_option("--shots", shots, "demonstrations per class");
    app->add_option("--dtype", dtype, "f32 | f64");
    app->add_option("--out", out, "root directory for run outputs");
    app->add_option("--template", tpl, "template JSON (external data)");
    app->add_option("--tokenizer", tokenizer, "tokenizer directory (external data)");
    app->add_option("--demos", demos, "demonstration pool JSONL (external data)");
    app->add_option("--test", test, "test set JSONL (external data)");
    app->add_option("--param", params, "experiment parameter key=value (value parsed as JSON when possible)");
  }

  RunConfig build(const std::string& experiment) const {
    json j = json::object();
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw std::invalid_argument("cannot read config '" + config_file + "'");
      j = json::parse(in);
    }
    j["experiment"] = experiment;
    if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
    if (!seeds.empty()) j["seeds"] = seeds;
    if (n_test) j["n_test"] = n_test;
    if (shots) j["shots"] = shots;
    if (!dtype.empty()) j["dtype"] = dtype;
    if (!out.empty()) j["output_dir"] = out;
    if (!tpl.empty()) j["template"] = tpl;
    if (!tokenizer.empty()) j["tokenizer"] = tokenizer;
    if (!demos.empty()) j["demos"] = demos;
    if (!test.empty()) j["test"] = test;
    if (!j.contains("params")) j["params"] = json::object();
    for (const auto& kv : params) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--param expects key=value, got '" + kv + "'");
      const auto value = kv.substr(eq + 1);
      j["params"][kv.substr(0, eq)] = json::accept(value) ? json::parse(value) : json(value);
    }
    return RunConfig::from_json(j);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-word anchor analysis of in-context learning"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-task", "write a synthetic task (splits, template, tokenizer)");
  TaskFlags gen_task;
  std::string gen_out;
  gen_task.add(gen);
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train-toy", "train a small in-context classifier on a synthetic task");
  TaskFlags train_task;
  train_task.add(train);
  ModelConfig model;
  model.n_layers = 10;
  model.n_heads = 2;
  model.d_model = 32;
  model.max_seq_len = 128;
  ToyRecipe recipe;
  std::string train_out, train_dtype = "f32";
  train->add_option("--layers", model.n_layers)->capture_default_str();
  train->add_option("--heads", model.n_heads)->capture_default_str();
  train->add_option("--d-model", model.d_model)->capture_default_str();
  train->add_option("--max-seq-len", model.max_seq_len)->capture_default_str();
  train->add_option("--steps", recipe.steps)->capture_default_str();
  train->add_option("--batch", recipe.batch)->capture_default_str();
  train->add_option("--warmup", recipe.warmup)->capture_default_str();
  train->add_option("--lr", recipe.adam.lr)->capture_default_str();
  train->add_option("--max-shots", recipe.max_shots)->capture_default_str();
  train->add_option("--fixed-label-rate", recipe.fixed_label_rate)->capture_default_str();
  train->add_option("--fixed-phase-steps", recipe.fixed_phase_steps)->capture_default_str();
  train->add_option("--init-std", recipe.init_std)->capture_default_str();
  train->add_option("--seed", recipe.seed)->capture_default_str();
  train->add_option("--dtype", train_dtype, "f32 | f64")->capture_default_str();
  train->add_option("--out", train_out, "checkpoint directory")->required();

  std::map<std::string, ExperimentFlags> exp_flags;
  std::map<std::string, CLI::App*> exp_cmds;
  const std::map<std::string, std::string> help = {
      {"saliency", "layer-wise information flow through label words"},
      {"isolate", "label-word isolation in the first or last layers"},
      {"auc", "target attention on label words vs the model's prediction"},
      {"reweight", "learned re-weighting of label-word attention"},
      {"compress", "anchor-only context compression benchmark"},
      {"diagnose", "predicted vs actual class confusion"}};
  for (const auto& kind : experiment_kinds()) {
    exp_cmds[kind] = app.add_subcommand(kind, help.at(kind));
    exp_flags[kind].add(exp_cmds[kind]);
  }
  auto* rw_train = exp_cmds["reweight"]->add_subcommand("train", "fit beta on the first seed and save it");
  std::string beta_out, beta_in;
  rw_train->add_option("--beta-out", beta_out, "beta JSON output")->required();
  auto* rw_eval = exp_cmds["reweight"]->add_subcommand("eval", "accuracy of a saved beta on the first seed");
  rw_eval->add_option("--beta", beta_in, "beta JSON")->required();
  exp_cmds["reweight"]->require_subcommand(0, 1);

  auto* rep = app.add_subcommand("report", "markdown summary of run directories");
  std::string rep_dir, rep_out;
  rep->add_option("dir", rep_dir, "run directory or a directory of runs")->required();
  rep->add_option("--out", rep_out, "write to a file instead of stdout");

  auto* ref = app.add_subcommand("check-reference", "compare logits with an exported reference");
  std::string ref_ckpt, ref_tok, ref_file;
  double ref_tol = 1e-3;
  ref->add_option("--checkpoint", ref_ckpt)->required();
  ref->add_option("--tokenizer", ref_tok, "tokenizer directory")->required();
  ref->add_option("--reference", ref_file, "reference JSON")->required();
  ref->add_option("--tolerance", ref_tol)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto task = gen_synthetic_task(gen_task.get());
      fs::create_directories(gen_out);
      save_labeled_file(fs::path(gen_out) / "train.jsonl", task.train);
      save_labeled_file(fs::path(gen_out) / "test.jsonl", task.test);
      task.tpl.save(fs::path(gen_out) / "template.json");
      fs::create_directories(fs::path(gen_out) / "tokenizer");
      task.tokenizer.save(fs::path(gen_out) / "tokenizer");
      json spec = json::object();
      for (const auto& [k, v] : task_meta(task.spec)) spec[k] = v;
      write_text(fs::path(gen_out) / "task.json", spec.dump(2) + "\n");
      std::cout << gen_out << "\n";
      return 0;
    }
    if (train->parsed()) {
      const auto task = gen_synthetic_task(train_task.get());
      ToyTrainLog log;
      CsvWriter loss({"step", "loss"});
      if (train_dtype == "f64") {
        save_checkpoint(train_toy<double>(task, model, recipe, &log), train_out);
      } else if (train_dtype == "f32") {
        save_checkpoint(train_toy<float>(task, model, recipe, &log), train_out);
      } else {
        throw std::invalid_argument("--dtype must be f32 or f64");
      }
      for (std::size_t i = 0; i < log.loss.size(); ++i) loss.row({std::to_string(i), csv_number(log.loss[i])});
      write_text(fs::path(train_out) / "train_loss.csv", loss.str());
      std::printf("final_loss %.6f eval_accuracy %.4f\n", log.final_loss, log.eval_accuracy);
      return 0;
    }
    if (rep->parsed()) {
      const auto text = report(rep_dir);
      if (rep_out.empty()) {
        std::cout << text;
      } else {
        write_text(rep_out, text);
      }
      return 0;
    }
    if (ref->parsed()) {
      const auto w = ModelWeights<float>::from_checkpoint(load_checkpoint<float>(ref_ckpt));
      const auto merges = fs::path(ref_tok) / "merges.txt";
      const auto tok = Tokenizer::load(fs::path(ref_tok) / "vocab.json",
                                       fs::exists(merges) ? std::optional<fs::path>(merges) : std::nullopt);
      const auto check = check_reference(w, tok, load_reference(ref_file));
      for (const auto& e : check.errors) std::cerr << e << "\n";
      std::printf("max_abs_error %.3g\n", check.max_abs_error);
      return check.passed(ref_tol) ? 0 : 1;
    }
    for (const auto& kind : experiment_kinds()) {
      if (!exp_cmds[kind]->parsed()) continue;
      const auto config = exp_flags[kind].build(kind);
      if (rw_train->parsed()) {
        const auto fit = reweight_train(config);
        fit.beta.save(beta_out);
        for (std::size_t e = 0; e < fit.epoch_loss.size(); ++e) std::printf("epoch %zu loss %.6f\n", e + 1, fit.epoch_loss[e]);
        return 0;
      }
      if (rw_eval->parsed()) {
        const auto res = reweight_eval(config, BetaVector::load(beta_in));
        for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
        std::printf("accuracy %.6f\n", res.accuracy);
        return 0;
      }
      const auto manifest = run_experiment(config);
      std::cout << manifest.dir.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
