// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/corpus/synthetic.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

#include "anchorlab/rng.hpp"

namespace anchorlab {
namespace {

const std::vector<std::string>& scaffolding_words() {
  static const std::vector<std::string> words = {"Review:", "Sentiment:", "Question:", "Answer", "Type:",
                                                 "Article:", "Answer:", "Dialogue:", "Emotion:"};
  return words;
}

const std::vector<std::string>& label_word_pool() {
  static const std::vector<std::string> words = {
      "Positive", "Negative",   "Abbreviation", "Entity", "Description", "Person", "Location",
      "Number",   "World",      "Sports",       "Business", "Technology", "Others", "Happy",
      "Sad",      "Angry",      "Neutral",      "Mixed",  "Red",         "Blue",   "Green",
      "Yellow",   "Alpha",      "Beta",         "Gamma",  "Delta"};
  return words;
}

std::vector<std::string> labels_for(TaskKind kind, std::size_t n_classes) {
  std::vector<std::string> base;
  switch (kind) {
    case TaskKind::kKeyedSentiment: base = {"Positive", "Negative", "Neutral", "Mixed"}; break;
    case TaskKind::kPatternTopic: base = {"World", "Sports", "Business", "Technology"}; break;
    case TaskKind::kEmotionLexicon: base = {"Others", "Happy", "Sad", "Angry"}; break;
  }
  for (const auto& w : {"Red", "Blue", "Green", "Yellow", "Alpha", "Beta", "Gamma", "Delta"}) {
    if (base.size() >= n_classes) break;
    base.emplace_back(w);
  }
  if (n_classes > base.size()) {
    throw std::invalid_argument("synthetic tasks support at most " + std::to_string(base.size()) + " classes");
  }
  base.resize(n_classes);
  return base;
}

std::string join(const std::vector<std::string>& words) {
  std::ostringstream os;
  for (std::size_t i = 0; i < words.size(); ++i) os << (i ? " " : "") << words[i];
  return os.str();
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kKeyedSentiment: return "keyed-sentiment";
    case TaskKind::kPatternTopic: return "pattern-topic";
    case TaskKind::kEmotionLexicon: return "emotion-lexicon";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "keyed-sentiment") return TaskKind::kKeyedSentiment;
  if (name == "pattern-topic") return TaskKind::kPatternTopic;
  if (name == "emotion-lexicon") return TaskKind::kEmotionLexicon;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

Template sst2_template() {
  return {"Review: <S1>\nSentiment: <L>", "Review: <S>\nSentiment:", {"Positive", "Negative"}, "\n"};
}
Template trec_template() {
  return {"Question: <S1>\nAnswer Type: <L>",
          "Question: <S>\nAnswer Type:",
          {"Abbreviation", "Entity", "Description", "Person", "Location", "Number"},
          "\n"};
}
Template agnews_template() {
  return {"Article: <S1>\nAnswer: <L>", "Article: <S>\nAnswer:", {"World", "Sports", "Business", "Technology"}, "\n"};
}
Template emoc_template() {
  return {"Dialogue: <S1>\nEmotion: <L>", "Dialogue: <S>\nEmotion:", {"Others", "Happy", "Sad", "Angry"}, "\n"};
}

std::size_t SyntheticTask::oracle_label(const std::string& text) const {
  std::map<std::string, std::size_t> owner;
  for (std::size_t c = 0; c < cues.size(); ++c) {
    for (const auto& w : cues[c]) owner[w] = c;
  }
  std::vector<std::size_t> counts(spec.n_classes, 0);
  std::istringstream is(text);
  std::string w;
  while (is >> w) {
    if (auto it = owner.find(w); it != owner.end()) ++counts[it->second];
    if (std::find(shared_cues.begin(), shared_cues.end(), w) != shared_cues.end()) ++counts[spec.n_classes - 2];
  }
  if (spec.kind == TaskKind::kEmotionLexicon) {
    for (std::size_t c = 1; c < counts.size(); ++c) {
      if (counts[c] > 0) return c;
    }
    return 0;
  }
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

SyntheticTask gen_synthetic_task(const TaskSpec& spec) {
  const std::size_t C = spec.n_classes;
  if (C < 2) throw std::invalid_argument("synthetic task needs at least 2 classes");
  if (spec.vocab_size < 2 * C + 2) {
    throw std::invalid_argument("vocab_size " + std::to_string(spec.vocab_size) + " is too small for " +
                                std::to_string(C) + " classes of cue words (need >= " + std::to_string(2 * C + 2) + ")");
  }
  if (spec.shared_cue_rate < 0.0 || spec.shared_cue_rate > 1.0) throw std::invalid_argument("shared_cue_rate must be in [0, 1]");

  SyntheticTask task;
  task.spec = spec;
  switch (spec.kind) {
    case TaskKind::kKeyedSentiment: task.tpl = sst2_template(); break;
    case TaskKind::kPatternTopic: task.tpl = agnews_template(); break;
    case TaskKind::kEmotionLexicon: task.tpl = emoc_template(); break;
  }
  task.tpl.label_words = labels_for(spec.kind, C);
  task.label_pool = label_word_pool();

  std::vector<std::string> content;
  for (std::size_t i = 0; i < spec.vocab_size; ++i) content.push_back("w" + std::to_string(i));
  const std::size_t per_class = std::max<std::size_t>(1, spec.vocab_size / (2 * C));
  const std::size_t n_shared = spec.shared_cue_rate > 0.0 ? per_class : 0;
  std::size_t next = 0;
  task.cues.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (spec.kind == TaskKind::kEmotionLexicon && c == 0) continue;
    for (std::size_t k = 0; k < per_class; ++k) task.cues[c].push_back(content[next++]);
  }
  for (std::size_t k = 0; k < n_shared; ++k) task.shared_cues.push_back(content[next++]);
  const std::vector<std::string> fillers(content.begin() + static_cast<std::ptrdiff_t>(next), content.end());
  if (fillers.size() < 2) throw std::invalid_argument("vocab_size leaves fewer than 2 filler words");

  std::vector<std::string> vocab = {"\n"};
  for (const auto& w : scaffolding_words()) vocab.push_back(w);
  for (const auto& w : label_word_pool()) vocab.push_back(w);
  vocab.insert(vocab.end(), content.begin(), content.end());
  task.tokenizer = Tokenizer::word_level(vocab);

  CounterRng rng(spec.seed, "synthetic-" + to_string(spec.kind));
  auto pick = [&](const std::vector<std::string>& from) { return from[rng.below(from.size())]; };
  auto make = [&](std::size_t label) {
    std::vector<std::string> words;
    const std::size_t len = 3 + rng.below(3);
    switch (spec.kind) {
      case TaskKind::kKeyedSentiment: {
        for (std::size_t i = 0; i + 1 < len; ++i) words.push_back(pick(fillers));
        const bool shared = label + 2 >= C && n_shared > 0 && rng.uniform() < spec.shared_cue_rate;
        const auto cue = shared ? pick(task.shared_cues) : pick(task.cues[label]);
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), cue);
        break;
      }
      case TaskKind::kPatternTopic: {
        for (std::size_t i = 0; i + 2 < len + 1; ++i) words.push_back(pick(fillers));
        for (int k = 0; k < 2; ++k) {
          const bool shared = label + 2 >= C && n_shared > 0 && rng.uniform() < spec.shared_cue_rate;
          const auto cue = shared ? pick(task.shared_cues) : pick(task.cues[label]);
          words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), cue);
        }
        if (rng.uniform() < 0.5) {
          std::size_t other = rng.below(C - 1);
          if (other >= label) ++other;
          words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), pick(task.cues[other]));
        }
        break;
      }
      case TaskKind::kEmotionLexicon: {
        for (std::size_t i = 0; i + 1 < len; ++i) words.push_back(pick(fillers));
        if (label == 0) {
          words.push_back(pick(fillers));
        } else {
          const bool shared = label + 2 >= C && n_shared > 0 && rng.uniform() < spec.shared_cue_rate;
          const auto cue = shared ? pick(task.shared_cues) : pick(task.cues[label]);
          words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), cue);
        }
        break;
      }
    }
    return LabeledExample{join(words), label};
  };
  auto split = [&](std::size_t n) {
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % C;
    rng.shuffle(labels);
    std::vector<LabeledExample> out;
    out.reserve(n);
    for (auto l : labels) out.push_back(make(l));
    return out;
  };
  task.train = split(spec.n_train);
  task.test = split(spec.n_test);
  return task;
}

}  // namespace anchorlab
