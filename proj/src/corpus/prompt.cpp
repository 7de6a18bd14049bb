// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/corpus/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

#include "anchorlab/rng.hpp"

namespace anchorlab {
namespace {

struct Part {
  bool slot = false;
  std::string text;    // literal text, or slot name
  std::string prefix;  // whitespace carried into a slot from the preceding literal
};

std::vector<Part> parse_pattern(const std::string& pattern) {
  std::vector<Part> parts;
  std::size_t i = 0;
  while (i < pattern.size()) {
    std::size_t open = std::string::npos;
    std::string name;
    for (const char* s : {"<S1>", "<S>", "<L>"}) {
      const auto at = pattern.find(s, i);
      if (at < open) {
        open = at;
        name = s;
      }
    }
    if (open == std::string::npos) {
      parts.push_back({false, pattern.substr(i), ""});
      break;
    }
    if (open > i) parts.push_back({false, pattern.substr(i, open - i), ""});
    Part slot{true, name, ""};
    if (!parts.empty() && !parts.back().slot) {
      auto& lit = parts.back().text;
      const auto keep = lit.find_last_not_of(' ');
      const std::size_t cut = keep == std::string::npos ? 0 : keep + 1;
      slot.prefix = lit.substr(cut);
      lit.erase(cut);
      if (lit.empty()) parts.pop_back();
    }
    parts.push_back(slot);
    i = open + name.size();
  }
  return parts;
}

std::size_t count_slot(const std::vector<Part>& parts, const std::string& name) {
  return static_cast<std::size_t>(std::count_if(parts.begin(), parts.end(), [&](const Part& p) { return p.slot && p.text == name; }));
}

std::string label_prefix(const Template& tpl) {
  for (const auto& p : parse_pattern(tpl.demo_pattern)) {
    if (p.slot && p.text == "<L>") return p.prefix;
  }
  return {};
}

}  // namespace

void Template::validate() const {
  const auto demo = parse_pattern(demo_pattern);
  const auto query = parse_pattern(query_pattern);
  if (count_slot(demo, "<L>") != 1) throw std::invalid_argument("demo_pattern needs exactly one <L> slot");
  if (count_slot(demo, "<S1>") != 1) throw std::invalid_argument("demo_pattern needs exactly one <S1> slot");
  if (count_slot(query, "<S>") != 1) throw std::invalid_argument("query_pattern needs exactly one <S> slot");
  if (query.empty() || query.back().slot) {
    throw std::invalid_argument("query_pattern must end with template text so the target position is scaffolding");
  }
  if (label_words.size() < 2) throw std::invalid_argument("template needs at least two label words");
  std::set<std::string> uniq(label_words.begin(), label_words.end());
  if (uniq.size() != label_words.size()) throw std::invalid_argument("label words must be distinct");
}

Template Template::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open template " + path.string());
  const auto j = nlohmann::json::parse(in);
  Template t;
  t.demo_pattern = j.at("demo_pattern").get<std::string>();
  t.query_pattern = j.at("query_pattern").get<std::string>();
  t.label_words = j.at("label_words").get<std::vector<std::string>>();
  if (j.contains("separator")) t.separator = j.at("separator").get<std::string>();
  t.validate();
  return t;
}

void Template::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["demo_pattern"] = demo_pattern;
  j["query_pattern"] = query_pattern;
  j["label_words"] = label_words;
  j["separator"] = separator;
  std::ofstream(path) << j.dump(2) << '\n';
}

std::vector<std::size_t> IclPrompt::anchors_of(std::size_t cls) const {
  std::vector<std::size_t> out;
  for (const auto& a : anchors) {
    if (a.cls == cls) out.push_back(a.position);
  }
  return out;
}

std::vector<TokenId> IclPrompt::query_tokens() const {
  return {tokens.begin() + static_cast<std::ptrdiff_t>(demo_len), tokens.end()};
}

std::vector<TokenId> IclPrompt::demo_tokens() const {
  return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(demo_len)};
}

std::vector<TokenId> label_anchor_ids(const Template& tpl, const Tokenizer& tok) {
  const auto prefix = label_prefix(tpl);
  std::vector<TokenId> ids;
  for (const auto& w : tpl.label_words) {
    const auto enc = tok.encode(prefix + w);
    if (enc.empty()) throw std::invalid_argument("label word '" + w + "' encodes to no tokens");
    ids.push_back(enc.front());
  }
  std::set<TokenId> uniq(ids.begin(), ids.end());
  if (uniq.size() != ids.size()) throw std::invalid_argument("label words share an anchor token");
  return ids;
}

IclPrompt build_prompt(const Template& tpl, const Tokenizer& tok, std::vector<LabeledExample> demos,
                       const LabeledExample& query, std::uint64_t order_seed, std::size_t max_seq_len) {
  tpl.validate();
  if (demos.empty()) throw std::invalid_argument("build_prompt: no demonstrations");
  const std::size_t n_classes = tpl.n_classes();
  for (const auto& d : demos) {
    if (d.label >= n_classes) {
      throw std::invalid_argument("build_prompt: demonstration label " + std::to_string(d.label) + " >= " +
                                  std::to_string(n_classes) + " classes");
    }
  }
  if (query.label >= n_classes) throw std::invalid_argument("build_prompt: query label out of range");

  CounterRng rng(order_seed, "demo-order");
  rng.shuffle(demos);

  IclPrompt p;
  p.label_ids = label_anchor_ids(tpl, tok);
  const auto demo_parts = parse_pattern(tpl.demo_pattern);
  const auto query_parts = parse_pattern(tpl.query_pattern);

  auto append = [&](const std::string& text, std::vector<std::size_t>* into) {
    const auto ids = tok.encode(text);
    for (auto id : ids) {
      if (into) into->push_back(p.tokens.size());
      p.tokens.push_back(id);
    }
    return ids.size();
  };

  for (const auto& demo : demos) {
    for (const auto& part : demo_parts) {
      if (!part.slot) {
        append(part.text, &p.format_positions);
      } else if (part.text == "<S1>") {
        append(part.prefix + demo.text, &p.content_positions);
      } else {
        const std::size_t start = p.tokens.size();
        std::vector<std::size_t> rest;
        const auto n = append(part.prefix + tpl.label_words[demo.label], &rest);
        if (n == 0) throw std::invalid_argument("label word encodes to no tokens");
        p.anchors.push_back({start, demo.label});
        p.content_positions.insert(p.content_positions.end(), rest.begin() + 1, rest.end());
      }
    }
    append(tpl.separator, &p.format_positions);
  }
  p.demo_len = p.tokens.size();
  for (const auto& part : query_parts) {
    append(part.slot ? part.prefix + query.text : part.text, nullptr);
  }
  p.query_len = p.tokens.size() - p.demo_len;
  p.target = p.tokens.size() - 1;
  p.query_label = query.label;
  if (p.tokens.size() > max_seq_len) {
    throw std::length_error("prompt has " + std::to_string(p.tokens.size()) + " tokens (demonstrations " +
                            std::to_string(p.demo_len) + ", query " + std::to_string(p.query_len) +
                            "), exceeding max_seq_len " + std::to_string(max_seq_len));
  }
  return p;
}

std::vector<LabeledExample> sample_demos(const std::vector<LabeledExample>& pool, std::size_t n_classes,
                                         std::size_t per_class, std::uint64_t seed) {
  CounterRng rng(seed, "demo-sample");
  std::vector<LabeledExample> out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool[i].label == c) idx.push_back(i);
    }
    if (idx.size() < per_class) {
      throw std::invalid_argument("sample_demos: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                  " examples, need " + std::to_string(per_class));
    }
    rng.shuffle(idx);
    for (std::size_t k = 0; k < per_class; ++k) out.push_back(pool[idx[k]]);
  }
  return out;
}

std::vector<IclPrompt> build_prompt_set(const Template& tpl, const Tokenizer& tok,
                                        const std::vector<LabeledExample>& demo_pool,
                                        const std::vector<LabeledExample>& queries, std::size_t n,
                                        std::size_t per_class, std::uint64_t seed, std::size_t max_seq_len) {
  if (n > 0 && queries.empty()) throw std::invalid_argument("build_prompt_set: no query examples");
  const CounterRng base(seed, "prompt-set");
  std::vector<IclPrompt> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = base.fork(i);
    const auto demos = sample_demos(demo_pool, tpl.n_classes(), per_class, rng.next_u64());
    out.push_back(build_prompt(tpl, tok, demos, queries[i % queries.size()], rng.next_u64(), max_seq_len));
  }
  return out;
}

std::vector<LabeledExample> load_labeled_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labeled file " + path.string());
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fail = [&](const std::string& why) {
      return std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j.contains("label") || !j["text"].is_string() ||
        !j["label"].is_number_integer()) {
      throw fail("expected {\"text\": string, \"label\": int}");
    }
    const auto label = j["label"].get<long long>();
    if (label < 0) throw fail("label " + std::to_string(label) + " is negative");
    out.push_back({j["text"].get<std::string>(), static_cast<std::size_t>(label)});
  }
  return out;
}

void save_labeled_file(const std::filesystem::path& path, const std::vector<LabeledExample>& examples) {
  std::ofstream out(path);
  for (const auto& e : examples) {
    nlohmann::ordered_json j;
    j["text"] = e.text;
    j["label"] = e.label;
    out << j.dump() << '\n';
  }
}

}  // namespace anchorlab
