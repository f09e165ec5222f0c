#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pidgen {

struct TokenSequence {
  std::vector<std::string> tokens;
  /// Byte offset of each token in the source string.
  std::vector<std::size_t> offsets;

  std::size_t size() const { return tokens.size(); }
  friend bool operator==(const TokenSequence& a, const TokenSequence& b) { return a.tokens == b.tokens; }
};

/// Splits an SFILES 2.0 string into model tokens. Hand-written equivalent of
/// the reference pattern
///   (\(.+?\)|\{.+?\}|[<%_]+\d+|\]|\[|\<\&\||(?<!<)\&\||n\||(?<!\&)(?<!n)\||\&(?!\|)|\d)
/// except that characters no alternative consumes raise TokenizeError
/// instead of being skipped.
TokenSequence tokenize(std::string_view s);

std::string detokenize(const TokenSequence& t);
std::string detokenize(std::span<const std::string> tokens);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;
  static constexpr std::string_view kSpecialTokens[kNumSpecial] = {"<pad>", "<s>", "</s>", "<unk>"};

  Vocabulary();
  /// Specials first, remaining tokens in the given order. Duplicates are rejected.
  explicit Vocabulary(std::span<const std::string> regular_tokens);

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t regular_size() const { return size() - kNumSpecial; }
  bool contains(std::string_view token) const;
  /// kUnk when absent.
  int id(std::string_view token) const;
  /// Throws DecodeError when out of range.
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// Vocab file: one token per line, line number == id, specials first.
  void save(std::ostream& os) const;
  static Vocabulary load(std::istream& is);
  /// Hex SHA-256 over the vocab file contents.
  std::string hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

/// All distinct tokens of the corpus plus specials, ids by lexicographic token order.
Vocabulary build_vocab(std::span<const TokenSequence> corpus);

struct EncodeResult {
  std::vector<int> ids;
  std::size_t unk_count = 0;
  std::vector<std::size_t> unk_positions;
};

EncodeResult encode(const TokenSequence& s, const Vocabulary& v);
/// Throws DecodeError on an out-of-range id.
TokenSequence decode(std::span<const int> ids, const Vocabulary& v);

}  // namespace pidgen
