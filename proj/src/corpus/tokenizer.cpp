// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "anchorlab/corpus/tokenizer.hpp"

#include <array>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace anchorlab {
namespace {

std::string utf8(std::uint32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

// GPT-2 byte -> printable code point table.
const std::array<std::uint32_t, 256>& byte_to_codepoint() {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    std::array<bool, 256> printable{};
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
    std::uint32_t n = 0;
    for (int b = 0; b < 256; ++b) t[b] = printable[b] ? static_cast<std::uint32_t>(b) : 256 + n++;
    return t;
  }();
  return table;
}

std::string map_bytes(std::string_view raw) {
  std::string out;
  for (unsigned char c : raw) out += utf8(byte_to_codepoint()[c]);
  return out;
}

std::vector<std::string> split_codepoints(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    const std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string unmap_bytes(const std::string& mapped) {
  static const auto inverse = [] {
    std::unordered_map<std::string, char> inv;
    for (int b = 0; b < 256; ++b) inv.emplace(utf8(byte_to_codepoint()[b]), static_cast<char>(b));
    return inv;
  }();
  std::string out;
  for (const auto& cp : split_codepoints(mapped)) {
    auto it = inverse.find(cp);
    out += it == inverse.end() ? cp : std::string(1, it->second);
  }
  return out;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }
bool is_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

// ASCII approximation of the GPT-2 pre-tokenizer.
std::vector<std::string> pretokenize(std::string_view s) {
  std::vector<std::string> out;
  const std::size_t n = s.size();
  auto at = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
  auto run = [&](std::size_t j, auto pred) {
    while (j < n && pred(at(j))) ++j;
    return j;
  };
  auto other = [](unsigned char c) { return !is_space(c) && !is_letter(c) && !is_digit(c); };
  std::size_t i = 0;
  while (i < n) {
    if (at(i) == '\'') {
      bool matched = false;
      for (std::string_view suffix : {"re", "ve", "ll", "s", "t", "m", "d"}) {
        if (s.substr(i + 1, suffix.size()) == suffix) {
          out.emplace_back(s.substr(i, 1 + suffix.size()));
          i += 1 + suffix.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    std::size_t start = i;
    std::size_t j = i;
    if (at(j) == ' ' && j + 1 < n && !is_space(at(j + 1))) ++j;
    const unsigned char c = at(j);
    if (!is_space(c)) {
      std::size_t end = is_letter(c) ? run(j, is_letter) : is_digit(c) ? run(j, is_digit) : run(j, other);
      out.emplace_back(s.substr(start, end - start));
      i = end;
      continue;
    }
    const std::size_t end = run(i, is_space);
    if (end == n || end - i == 1) {
      out.emplace_back(s.substr(i, end - i));
      i = end;
    } else {
      out.emplace_back(s.substr(i, end - i - 1));
      i = end - 1;
    }
  }
  return out;
}

// Word-level pieces: maximal non-whitespace runs and individual newlines.
std::vector<std::string> word_pieces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '\n') {
      out.emplace_back("\n");
      ++i;
    } else if (is_space(static_cast<unsigned char>(c))) {
      ++i;
    } else {
      std::size_t j = i;
      while (j < s.size() && !is_space(static_cast<unsigned char>(s[j]))) ++j;
      out.emplace_back(s.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

}  // namespace

Tokenizer Tokenizer::word_level(std::vector<std::string> vocab) {
  Tokenizer t;
  t.kind_ = TokenizerKind::kWordLevel;
  t.vocab_ = std::move(vocab);
  for (TokenId i = 0; i < t.vocab_.size(); ++i) {
    if (!t.ids_.emplace(t.vocab_[i], i).second) throw std::invalid_argument("duplicate vocab entry '" + t.vocab_[i] + "'");
  }
  return t;
}

Tokenizer Tokenizer::byte_pair(std::vector<std::string> vocab, std::vector<std::pair<std::string, std::string>> merges) {
  Tokenizer t = word_level(std::move(vocab));
  t.kind_ = TokenizerKind::kBytePair;
  t.merges_ = std::move(merges);
  for (std::size_t r = 0; r < t.merges_.size(); ++r) {
    t.merge_rank_.emplace(t.merges_[r].first + " " + t.merges_[r].second, r);
  }
  return t;
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_json, const std::optional<std::filesystem::path>& merges_txt) {
  std::ifstream in(vocab_json);
  if (!in) throw std::runtime_error("cannot open vocab file " + vocab_json.string());
  const auto j = nlohmann::json::parse(in);
  std::vector<std::string> vocab(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [tok, id] : j.items()) {
    const auto idx = id.get<std::size_t>();
    if (idx >= vocab.size() || seen[idx]) {
      throw std::runtime_error("vocab ids in " + vocab_json.string() + " must be a permutation of 0..n-1");
    }
    seen[idx] = true;
    vocab[idx] = tok;
  }
  if (!merges_txt) return word_level(std::move(vocab));
  std::ifstream mf(*merges_txt);
  if (!mf) throw std::runtime_error("cannot open merges file " + merges_txt->string());
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty() || line.starts_with("#version")) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw std::runtime_error("malformed merge line: " + line);
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return byte_pair(std::move(vocab), std::move(merges));
}

void Tokenizer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  for (TokenId i = 0; i < vocab_.size(); ++i) j[vocab_[i]] = i;
  std::ofstream(dir / "vocab.json") << j.dump(1) << '\n';
  if (kind_ == TokenizerKind::kBytePair) {
    std::ofstream mf(dir / "merges.txt");
    mf << "#version: 0.2\n";
    for (const auto& [a, b] : merges_) mf << a << ' ' << b << '\n';
  }
}

const std::string& Tokenizer::token(TokenId id) const {
  if (id >= vocab_.size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return vocab_[id];
}

std::optional<TokenId> Tokenizer::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::string Tokenizer::display(TokenId id) const {
  return kind_ == TokenizerKind::kBytePair ? unmap_bytes(token(id)) : token(id);
}

std::vector<std::string> Tokenizer::encode_word(const std::string& mapped) const {
  auto parts = split_codepoints(mapped);
  while (parts.size() > 1) {
    std::size_t best = std::numeric_limits<std::size_t>::max(), at = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto it = merge_rank_.find(parts[i] + " " + parts[i + 1]);
      if (it != merge_rank_.end() && it->second < best) {
        best = it->second;
        at = i;
      }
    }
    if (best == std::numeric_limits<std::size_t>::max()) break;
    parts[at] += parts[at + 1];
    parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(at) + 1);
  }
  return parts;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  auto lookup = [&](const std::string& piece) {
    auto it = ids_.find(piece);
    if (it == ids_.end()) {
      auto unk = ids_.find("<unk>");
      if (unk == ids_.end()) throw std::invalid_argument("token '" + piece + "' is not in the vocabulary");
      return unk->second;
    }
    return it->second;
  };
  if (kind_ == TokenizerKind::kWordLevel) {
    for (const auto& w : word_pieces(text)) out.push_back(lookup(w));
    return out;
  }
  for (const auto& pre : pretokenize(text)) {
    for (const auto& piece : encode_word(map_bytes(pre))) out.push_back(lookup(piece));
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  if (kind_ == TokenizerKind::kBytePair) {
    for (auto id : ids) out += token(id);
    return unmap_bytes(out);
  }
  bool prev_word = false;
  for (auto id : ids) {
    const auto& t = token(id);
    if (t == "\n") {
      out += t;
      prev_word = false;
      continue;
    }
    if (prev_word) out += ' ';
    out += t;
    prev_word = true;
  }
  return out;
}

}  // namespace anchorlab
