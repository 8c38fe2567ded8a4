#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fusecap/ops.hpp"

namespace fusecap {

using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kStart = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kMask = 4;
inline constexpr std::size_t kNumSpecials = 5;

/// Closed token <-> id bijection with fixed special ids.
class Vocab {
 public:
  Vocab();
  /// Builds from tokens in id order; the first five must be the specials.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  /// <unk> for unknown tokens.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_special(TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < kNumSpecials; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercased whitespace tokens.
std::vector<std::string> split_words(std::string_view text);

/// Vocabulary over `captions`; words seen fewer than min_count times are left
/// out (and so map to <unk>). Non-special tokens are sorted alphabetically.
Vocab build_vocab(const std::vector<std::string>& captions, std::size_t min_count = 5);

/// Lowercase, split on whitespace, map OOV to <unk>, wrap in <start> ... <eos>.
TokenSeq tokenize(std::string_view text, const Vocab& vocab);
/// Drops special tokens and joins the rest with single spaces.
std::string detokenize(std::span<const TokenId> seq, const Vocab& vocab);
/// Copy of `seq` without <pad>/<start>/<eos>/[MASK].
TokenSeq strip_specials(std::span<const TokenId> seq);

}  // namespace fusecap
