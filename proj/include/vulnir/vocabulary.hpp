#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vulnir/errors.hpp"
#include "vulnir/fsio.hpp"
#include "vulnir/ir_program.hpp"
#include "vulnir/preprocess.hpp"

namespace vulnir {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kSepId = 2;
inline constexpr std::int32_t kClsId = 3;
inline constexpr std::int32_t kNumSpecialTokens = 4;

inline constexpr std::array<std::string_view, kNumSpecialTokens> kSpecialTokens = {
    "[PAD]", "[UNK]", "[SEP]", "[CLS]"};

// Bijection between token strings and contiguous IDs. The four special
// tokens own IDs 0..3; corpus tokens start at 4.
class Vocabulary {
public:
  Vocabulary() {
    for (auto s : kSpecialTokens) id_to_token_.emplace_back(s);
  }

  static bool is_special(const std::string& token) {
    for (auto s : kSpecialTokens) {
      if (token == s) return true;
    }
    return false;
  }

  void add_token(const std::string& token) {
    if (token.empty()) throw InvariantViolation("vocabulary: empty token");
    if (is_special(token)) {
      throw InvariantViolation("vocabulary: reserved special token '" + token +
                               "' cannot be a corpus token");
    }
    if (token_to_id_.count(token)) {
      throw InvariantViolation("vocabulary: duplicate token '" + token + "'");
    }
    const auto id = static_cast<std::int32_t>(id_to_token_.size());
    token_to_id_.emplace(token, id);
    id_to_token_.push_back(token);
  }

  // total size including specials; valid IDs are [0, size())
  std::int32_t size() const { return static_cast<std::int32_t>(id_to_token_.size()); }
  std::int32_t n_tokens() const { return size() - kNumSpecialTokens; }

  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

  // unknown tokens map to UNK
  std::int32_t id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }

  const std::string& token_of(std::int32_t id) const {
    if (id < 0 || id >= size()) {
      throw IdOutOfRange("vocabulary: id " + std::to_string(id) + " outside [0, " +
                         std::to_string(size()) + ")");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

  // File format: one token per line, 0-based line number is the ID; the
  // first four lines are the special tokens.
  std::string serialize() const {
    std::string out;
    for (const auto& t : id_to_token_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

  static Vocabulary load(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    Vocabulary vocab;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      const std::string token = text.substr(pos, end - pos);
      pos = end + 1;
      if (line_no < kNumSpecialTokens) {
        if (token != kSpecialTokens[line_no]) {
          throw ParseError(path.string() + ": line " + std::to_string(line_no) + " must be '" +
                           std::string(kSpecialTokens[line_no]) + "', got '" + token + "'");
        }
      } else {
        try {
          vocab.add_token(token);
        } catch (const InvariantViolation& e) {
          throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
        }
      }
      ++line_no;
    }
    if (line_no < kNumSpecialTokens) {
      throw ParseError(path.string() + ": vocabulary file must start with the four special tokens");
    }
    return vocab;
  }

private:
  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Collects the distinct whitespace-separated tokens of the corpus and
// assigns IDs in lexicographic byte order, so the vocabulary does not depend
// on program order.
inline Vocabulary build_vocab(const std::vector<IrProgram>& programs) {
  std::set<std::string> distinct;
  for (const auto& p : programs) {
    for (const auto& line : p.lines) {
      for (auto& tok : detail::split_tokens(line)) {
        distinct.insert(std::move(tok));
      }
    }
  }
  if (distinct.empty()) throw EmptyCorpus("build_vocab: no tokens in corpus");
  Vocabulary vocab;
  for (const auto& tok : distinct) vocab.add_token(tok);
  return vocab;
}

}  // namespace vulnir
