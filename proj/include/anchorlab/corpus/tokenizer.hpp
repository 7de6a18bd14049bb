// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace anchorlab {

using TokenId = std::size_t;

enum class TokenizerKind { kWordLevel, kBytePair };

/// Word-level or GPT-2 style byte-level BPE tokenizer.
///
/// Word-level text is a sequence of whitespace-separated words and "\n"
/// tokens; decode joins adjacent words with a single space and never puts a
/// space next to a newline, so decode(encode(s)) == s for text already in that
/// canonical form.
///
/// Byte-pair text follows the GPT-2 scheme: bytes are mapped to printable code
/// points, pre-tokenized (ASCII approximation of the GPT-2 split pattern, with
/// every non-ASCII byte treated as a letter), then merged by rank.
class Tokenizer {
 public:
  static Tokenizer word_level(std::vector<std::string> vocab);
  static Tokenizer byte_pair(std::vector<std::string> vocab, std::vector<std::pair<std::string, std::string>> merges);

  /// vocab.json maps token string -> id; merges.txt (GPT-2 format) selects the
  /// byte-pair kind.
  static Tokenizer load(const std::filesystem::path& vocab_json,
                        const std::optional<std::filesystem::path>& merges_txt = std::nullopt);
  /// Writes vocab.json (and merges.txt for byte-pair) into `dir`.
  void save(const std::filesystem::path& dir) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  TokenizerKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return vocab_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  /// Printable form of a token (byte-pair tokens are mapped back to bytes).
  std::string display(TokenId id) const;

 private:
  std::vector<std::string> encode_word(const std::string& mapped) const;

  TokenizerKind kind_ = TokenizerKind::kWordLevel;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, std::size_t> merge_rank_;
};

}  // namespace anchorlab
