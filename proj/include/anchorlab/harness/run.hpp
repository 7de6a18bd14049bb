// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/analysis/reweight.hpp"
#include "anchorlab/corpus/prompt.hpp"
#include "anchorlab/corpus/tokenizer.hpp"

namespace anchorlab {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// Experiment settings. Without external data paths, the task is regenerated
/// from the synthetic-task record in the checkpoint metadata.
struct RunConfig {
  /// saliency | isolate | auc | reweight | compress | diagnose
  std::string experiment;
  std::filesystem::path checkpoint;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  /// Queries per seed, capped at the test split size.
  std::size_t n_test = 1000;
  /// Demonstrations per class.
  std::size_t shots = 1;
  /// f32 | f64
  std::string dtype = "f32";
  std::filesystem::path output_dir = "runs";
  /// External data (all four together): template JSON, tokenizer directory
  /// (vocab.json, optional merges.txt), demonstration pool and test set in
  /// JSON lines.
  std::optional<std::filesystem::path> template_path;
  std::optional<std::filesystem::path> tokenizer_dir;
  std::optional<std::filesystem::path> demos_path;
  std::optional<std::filesystem::path> test_path;
  /// Experiment-specific parameters.
  nlohmann::json params = nlohmann::json::object();

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Checks fields and that every referenced path exists.
  void validate() const;

  template <typename V>
  V param(const std::string& key, V fallback) const {
    return params.contains(key) ? params.at(key).get<V>() : fallback;
  }
};

const std::vector<std::string>& experiment_kinds();

struct ManifestFile {
  std::string name;
  std::string sha256;
  std::uintmax_t bytes = 0;
  /// Aggregate outputs are reproducible byte for byte; timing files are not.
  bool aggregate = true;
};

struct RunManifest {
  std::filesystem::path dir;
  std::string experiment;
  nlohmann::json config;
  std::string started;
  std::string finished;
  std::vector<ManifestFile> files;

  nlohmann::json to_json() const;
  static RunManifest load(const std::filesystem::path& dir);
};

/// Fresh output directory of one run. Files are hashed into the manifest,
/// which is written atomically by `finish`; `fail` leaves a FAILED marker
/// next to the partial outputs.
class RunDirectory {
 public:
  static RunDirectory create(const std::filesystem::path& root, const std::string& experiment);

  const std::filesystem::path& path() const noexcept { return dir_; }
  void write(const std::string& name, const std::string& content, bool aggregate = true);
  RunManifest finish(const nlohmann::json& config);
  void fail(const std::string& message);

 private:
  std::filesystem::path dir_;
  std::string experiment_;
  std::string started_;
  std::vector<ManifestFile> files_;
};

/// Runs one experiment into a fresh directory under `config.output_dir`.
/// Invalid configs throw before anything is created; failures during the run
/// leave a FAILED marker and rethrow.
RunManifest run_experiment(const RunConfig& config);

/// Beta training and evaluation on the first seed's data of a reweight
/// config: fixed demonstrations, `train_per_class` extra labeled prompts, and
/// the test queries.
ReweightResult reweight_train(const RunConfig& config);
EvalResult reweight_eval(const RunConfig& config, const BetaVector& beta);

/// Markdown summary of one run directory, or of every run directory below
/// `dir`.
std::string report(const std::filesystem::path& dir);

std::string utc_timestamp();

}  // namespace anchorlab
