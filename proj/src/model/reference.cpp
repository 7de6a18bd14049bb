// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/model/reference.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace anchorlab {

std::vector<ReferenceProbe> load_reference(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const auto j = nlohmann::json::parse(in);
  std::vector<ReferenceProbe> out;
  for (const auto& p : j.at("probes")) {
    out.push_back({p.at("text").get<std::string>(), p.at("ids").get<std::vector<TokenId>>(),
                   p.at("logits").get<std::vector<double>>()});
  }
  return out;
}

template <typename T>
ReferenceCheck check_reference(const ModelWeights<T>& w, const Tokenizer& tok, const std::vector<ReferenceProbe>& probes) {
  ReferenceCheck out;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto& p = probes[i];
    const std::string tag = "probe " + std::to_string(i) + " ('" + p.text + "')";
    if (p.ids.empty()) {
      out.errors.push_back(tag + ": no token ids");
      continue;
    }
    if (tok.encode(p.text) != p.ids) {
      out.errors.push_back(tag + ": tokenization differs from the recorded ids");
      continue;
    }
    if (p.logits.size() != w.config.vocab_size) {
      out.errors.push_back(tag + ": " + std::to_string(p.logits.size()) + " logits for vocabulary " +
                           std::to_string(w.config.vocab_size));
      continue;
    }
    const auto res = forward<T>(w, p.ids);
    const std::size_t v = res.logits.dim(1);
    const auto last = res.logits.data().subspan((p.ids.size() - 1) * v, v);
    for (std::size_t k = 0; k < v; ++k) {
      out.max_abs_error = std::max(out.max_abs_error, std::abs(static_cast<double>(last[k]) - p.logits[k]));
    }
  }
  return out;
}

template ReferenceCheck check_reference(const ModelWeights<float>&, const Tokenizer&, const std::vector<ReferenceProbe>&);
template ReferenceCheck check_reference(const ModelWeights<double>&, const Tokenizer&, const std::vector<ReferenceProbe>&);

}  // namespace anchorlab
