#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vulnir/errors.hpp"
#include "vulnir/ir_program.hpp"
#include "vulnir/preprocess.hpp"
#include "vulnir/vocabulary.hpp"

namespace vulnir {

// Encoded ID sequence for one program. Framing is
//   [CLS] [SEP] line1-tokens [SEP] line2-tokens [SEP] ... [SEP]
// so each line is fenced by a SEP on both sides and adjacent lines share one.
// line_spans maps each original line to its token range (SEPs excluded).
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::pair<std::int32_t, std::int32_t>> line_spans;

  std::int32_t length() const { return static_cast<std::int32_t>(ids.size()); }
};

inline TokenSequence encode(const IrProgram& program, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.push_back(kClsId);
  seq.ids.push_back(kSepId);
  for (const auto& line : program.lines) {
    const auto start = static_cast<std::int32_t>(seq.ids.size());
    for (const auto& tok : detail::split_tokens(line)) {
      seq.ids.push_back(vocab.id_of(tok));
    }
    seq.line_spans.emplace_back(start, static_cast<std::int32_t>(seq.ids.size()));
    seq.ids.push_back(kSepId);
  }
  return seq;
}

// Inverse of encode for in-vocabulary programs; UNK decodes to "[UNK]".
inline std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  const auto& ids = seq.ids;
  if (ids.size() < 2 || ids[0] != kClsId || ids[1] != kSepId) {
    throw MalformedSequence("decode: sequence must begin with [CLS] [SEP]");
  }
  if (ids.back() != kSepId) {
    throw MalformedSequence("decode: sequence must end with [SEP]");
  }
  std::vector<std::string> lines;
  std::string current;
  bool current_empty = true;
  for (std::size_t i = 2; i < ids.size(); ++i) {
    const std::int32_t id = ids[i];
    if (id == kSepId) {
      lines.push_back(current);
      current.clear();
      current_empty = true;
      continue;
    }
    if (id == kClsId || id == kPadId) {
      throw MalformedSequence("decode: unexpected special id " + std::to_string(id) +
                              " at position " + std::to_string(i));
    }
    if (id < 0 || id >= vocab.size()) {
      throw MalformedSequence("decode: id " + std::to_string(id) + " outside vocabulary");
    }
    if (!current_empty) current += ' ';
    current += vocab.token_of(id);
    current_empty = false;
  }
  return lines;
}

// Fixed-length view for batching: PAD-fill up to max_len, or truncate with
// the last position overwritten by SEP so the framing stays sealed. The mask
// is 1 for real tokens and 0 for padding.
inline std::pair<std::vector<std::int32_t>, std::vector<std::uint8_t>> pad_or_truncate(
    const TokenSequence& seq, std::int32_t max_len) {
  if (max_len < 2) throw ConfigError("pad_or_truncate: max_len must be >= 2");
  const auto n = static_cast<std::int32_t>(seq.ids.size());
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  if (n > max_len) {
    ids.assign(seq.ids.begin(), seq.ids.begin() + max_len);
    ids[static_cast<std::size_t>(max_len) - 1] = kSepId;
    mask.assign(static_cast<std::size_t>(max_len), 1);
  } else {
    ids = seq.ids;
    ids.resize(static_cast<std::size_t>(max_len), kPadId);
    mask.assign(static_cast<std::size_t>(n), 1);
    mask.resize(static_cast<std::size_t>(max_len), 0);
  }
  return {std::move(ids), std::move(mask)};
}

}  // namespace vulnir
