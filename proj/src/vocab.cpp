#include "fusecap/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "fusecap/errors.hpp"

namespace fusecap {
namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<start>", "<eos>", "<unk>",
                                                    "[MASK]"};
  return specials;
}

}  // namespace

Vocab::Vocab() {
  for (const auto& s : special_tokens()) add(s);
}

void Vocab::add(std::string token) {
  if (index_.contains(token)) throw InputError("duplicate vocabulary token: " + token);
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw InputError("vocabulary must start with the special tokens <pad> <start> <eos> <unk> [MASK]");
  }
  Vocab v;
  for (std::size_t i = specials.size(); i < tokens.size(); ++i) v.add(std::move(tokens[i]));
  return v;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.contains(std::string(token)); }

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

std::vector<std::string> split_words(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream is(lower);
  std::vector<std::string> words;
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

Vocab build_vocab(const std::vector<std::string>& captions, std::size_t min_count) {
  if (captions.empty()) throw InputError("build_vocab: empty training corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (auto& w : split_words(c)) ++counts[w];
  }
  std::vector<std::string> tokens = special_tokens();
  for (const auto& [word, n] : counts) {
    if (n >= min_count && std::find(tokens.begin(), tokens.end(), word) == tokens.end()) {
      tokens.push_back(word);
    }
  }
  return Vocab::from_tokens(std::move(tokens));
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab) {
  TokenSeq seq{kStart};
  for (const auto& w : split_words(text)) seq.push_back(vocab.id(w));
  seq.push_back(kEos);
  return seq;
}

std::string detokenize(std::span<const TokenId> seq, const Vocab& vocab) {
  std::string out;
  for (TokenId id : seq) {
    if (id == kPad || id == kStart || id == kEos || id == kMask) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

TokenSeq strip_specials(std::span<const TokenId> seq) {
  TokenSeq out;
  for (TokenId id : seq) {
    if (id == kPad || id == kStart || id == kEos || id == kMask) continue;
    out.push_back(id);
  }
  return out;
}

}  // namespace fusecap
