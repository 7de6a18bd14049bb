// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anchorlab/corpus/tokenizer.hpp"
#include "anchorlab/model/transformer.hpp"

namespace anchorlab {

/// Token ids and final-position logits recorded by an external implementation.
struct ReferenceProbe {
  std::string text;
  std::vector<TokenId> ids;
  std::vector<double> logits;
};

/// {"probes": [{"text": ..., "ids": [...], "logits": [...]}, ...]}
std::vector<ReferenceProbe> load_reference(const std::filesystem::path& path);

struct ReferenceCheck {
  double max_abs_error = 0.0;
  /// Per-probe problems (tokenization or size mismatches).
  std::vector<std::string> errors;
  bool passed(double tolerance) const { return errors.empty() && max_abs_error <= tolerance; }
};

/// Re-tokenizes every probe, runs the model and compares final-position
/// logits.
template <typename T>
ReferenceCheck check_reference(const ModelWeights<T>& w, const Tokenizer& tok, const std::vector<ReferenceProbe>& probes);

}  // namespace anchorlab
