#include "pidgen/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "pidgen/digest.hpp"
#include "pidgen/errors.hpp"

namespace pidgen {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Length of a lazy `open .+? close` match starting at i, or 0.
std::size_t match_delimited(std::string_view s, std::size_t i, char open, char close) {
  if (s[i] != open || i + 1 >= s.size() || s[i + 1] == '\n') return 0;
  for (std::size_t j = i + 2; j < s.size(); ++j) {
    if (s[j] == '\n') return 0;
    if (s[j] == close) return j - i + 1;
  }
  return 0;
}

// Length of the first alternative matching at i, or 0.
std::size_t match_at(std::string_view s, std::size_t i) {
  const char c = s[i];
  const auto next = [&](std::size_t k) -> char { return i + k < s.size() ? s[i + k] : '\0'; };
  if (std::size_t len = match_delimited(s, i, '(', ')')) return len;
  if (std::size_t len = match_delimited(s, i, '{', '}')) return len;
  if (c == '<' || c == '%' || c == '_') {
    std::size_t j = i;
    while (j < s.size() && (s[j] == '<' || s[j] == '%' || s[j] == '_')) ++j;
    std::size_t k = j;
    while (k < s.size() && is_digit(s[k])) ++k;
    if (k > j) return k - i;
  }
  if (c == ']' || c == '[') return 1;
  if (c == '<' && next(1) == '&' && next(2) == '|') return 3;
  if (c == '&' && next(1) == '|' && (i == 0 || s[i - 1] != '<')) return 2;
  if (c == 'n' && next(1) == '|') return 2;
  if (c == '|' && (i == 0 || (s[i - 1] != '&' && s[i - 1] != 'n'))) return 1;
  if (c == '&' && next(1) != '|') return 1;
  if (is_digit(c)) return 1;
  return 0;
}

}  // namespace

TokenSequence tokenize(std::string_view s) {
  if (s.empty()) throw TokenizeError(0, "empty input");
  TokenSequence out;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t len = match_at(s, i);
    if (len == 0) {
      throw TokenizeError(i, std::string("unexpected character '") + s[i] + "'");
    }
    out.tokens.emplace_back(s.substr(i, len));
    out.offsets.push_back(i);
    i += len;
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string s;
  for (const auto& t : tokens) s += t;
  return s;
}

std::string detokenize(const TokenSequence& t) { return detokenize(std::span<const std::string>(t.tokens)); }

Vocabulary::Vocabulary() {
  for (auto sp : kSpecialTokens) {
    token_to_id_.emplace(std::string(sp), static_cast<int>(id_to_token_.size()));
    id_to_token_.emplace_back(sp);
  }
}

Vocabulary::Vocabulary(std::span<const std::string> regular_tokens) : Vocabulary() {
  for (const auto& t : regular_tokens) {
    if (!token_to_id_.emplace(t, static_cast<int>(id_to_token_.size())).second) {
      throw DecodeError("duplicate vocabulary token '" + t + "'");
    }
    id_to_token_.push_back(t);
  }
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.contains(std::string(token)); }

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw DecodeError("token id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(std::ostream& os) const {
  for (const auto& t : id_to_token_) os << t << '\n';
}

Vocabulary Vocabulary::load(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  if (lines.size() < kNumSpecial) throw DecodeError("vocab file too short");
  for (int i = 0; i < kNumSpecial; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kSpecialTokens[i]) {
      throw DecodeError("vocab file does not start with the special tokens");
    }
  }
  return Vocabulary(std::span<const std::string>(lines).subspan(kNumSpecial));
}

std::string Vocabulary::hash() const {
  std::ostringstream os;
  save(os);
  return sha256_hex(os.str());
}

Vocabulary build_vocab(std::span<const TokenSequence> corpus) {
  std::set<std::string> distinct;
  for (const auto& seq : corpus) distinct.insert(seq.tokens.begin(), seq.tokens.end());
  for (auto sp : Vocabulary::kSpecialTokens) distinct.erase(std::string(sp));
  std::vector<std::string> sorted(distinct.begin(), distinct.end());
  return Vocabulary(sorted);
}

EncodeResult encode(const TokenSequence& s, const Vocabulary& v) {
  EncodeResult r;
  r.ids.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int id = v.id(s.tokens[i]);
    if (id == Vocabulary::kUnk && s.tokens[i] != Vocabulary::kSpecialTokens[Vocabulary::kUnk]) {
      ++r.unk_count;
      r.unk_positions.push_back(i);
    }
    r.ids.push_back(id);
  }
  return r;
}

TokenSequence decode(std::span<const int> ids, const Vocabulary& v) {
  TokenSequence t;
  std::size_t offset = 0;
  for (int id : ids) {
    t.tokens.push_back(v.token(id));
    t.offsets.push_back(offset);
    offset += t.tokens.back().size();
  }
  return t;
}

}  // namespace pidgen
