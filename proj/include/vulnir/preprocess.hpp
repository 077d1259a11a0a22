#pragma once

#include <cctype>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "vulnir/errors.hpp"
#include "vulnir/ir_program.hpp"

namespace vulnir {

struct PreprocessConfig {
  // exclusive line cap; programs with length(lines) < max_lines survive
  std::uint32_t max_lines = 265;
  bool strip_user_functions = true;
  bool normalize_locals = true;

  static constexpr std::uint32_t kNoLineCap = std::numeric_limits<std::uint32_t>::max();

  void validate() const {
    if (max_lines < 1) throw ConfigError("preprocess: max_lines must be >= 1");
  }
};

namespace detail {

inline std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline bool line_has_token(const std::string& line, const std::string& wanted) {
  for (const auto& t : split_tokens(line)) {
    if (t == wanted) return true;
  }
  return false;
}

inline bool is_define_line(const std::string& line) {
  const auto tokens = split_tokens(line);
  return !tokens.empty() && tokens.front() == "define";
}

}  // namespace detail

// Trims each line and collapses internal whitespace runs to single spaces.
// Establishes the token-separation invariant the other passes assume.
inline IrProgram canonicalize_whitespace(const IrProgram& program) {
  IrProgram out = program;
  for (auto& line : out.lines) {
    line = detail::join_tokens(detail::split_tokens(line));
  }
  return out;
}

// Removes inlined user-defined function wrappers: whenever a `call` line is
// immediately followed by a `define` line, the call line, the define line and
// the brace line closing the define's body are dropped while the body stays
// in place. Re-scans from the top after each removal so nested wrappers are
// unwrapped outermost-first. Surviving lines keep their labels.
inline IrProgram strip_user_functions(const IrProgram& program) {
  IrProgram out = program;
  for (;;) {
    const std::size_t n = out.lines.size();
    std::size_t call_idx = n;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (detail::line_has_token(out.lines[i], "call") && detail::is_define_line(out.lines[i + 1])) {
        call_idx = i;
        break;
      }
    }
    if (call_idx == n) break;

    const std::size_t define_idx = call_idx + 1;
    // brace-depth scan from the define line to its closing brace
    long depth = 0;
    bool seen_open = false;
    std::size_t close_idx = n;
    for (std::size_t j = define_idx; j < n; ++j) {
      for (char c : out.lines[j]) {
        if (c == '{') {
          ++depth;
          seen_open = true;
        } else if (c == '}') {
          --depth;
        }
      }
      if (seen_open && depth <= 0) {
        close_idx = j;
        break;
      }
    }
    if (close_idx == n) {
      throw MalformedFunctionBlock("program '" + out.id + "': define at line " +
                                   std::to_string(define_idx) + " has no matching closing brace");
    }

    std::vector<std::size_t> removed = {call_idx, define_idx};
    if (close_idx != define_idx) removed.push_back(close_idx);
    for (std::size_t r : removed) {
      if (out.line_labels[r] == 1) {
        throw LabelOnRemovedLine("program '" + out.id + "': removed wrapper line " +
                                 std::to_string(r) + " carries label 1");
      }
    }
    for (auto it = removed.rbegin(); it != removed.rend(); ++it) {
      out.lines.erase(out.lines.begin() + static_cast<std::ptrdiff_t>(*it));
      out.line_labels.erase(out.line_labels.begin() + static_cast<std::ptrdiff_t>(*it));
    }
  }
  return out;
}

// Renames every distinct `%`-prefixed local to `%<k>` in first-occurrence
// order, consistently across the whole program. Globals (`@`) are untouched.
inline IrProgram normalize_locals(const IrProgram& program) {
  auto is_ident_char = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '$' || c == '.' || c == '_';
  };

  std::unordered_map<std::string, int> numbering;
  int next = 1;
  for (const auto& line : program.lines) {
    std::size_t i = 0;
    while (i < line.size()) {
      if (line[i] == '%') {
        std::size_t start = ++i;
        while (i < line.size() && is_ident_char(line[i])) ++i;
        if (i > start) {
          const std::string name = line.substr(start, i - start);
          if (!numbering.count(name)) numbering[name] = next++;
        }
      } else {
        ++i;
      }
    }
  }

  IrProgram out = program;
  for (auto& line : out.lines) {
    std::string rebuilt;
    rebuilt.reserve(line.size());
    std::size_t i = 0;
    while (i < line.size()) {
      if (line[i] == '%') {
        std::size_t start = i + 1;
        std::size_t end = start;
        while (end < line.size() && is_ident_char(line[end])) ++end;
        if (end > start) {
          rebuilt += '%';
          rebuilt += std::to_string(numbering.at(line.substr(start, end - start)));
          i = end;
          continue;
        }
      }
      rebuilt += line[i++];
    }
    line = rebuilt;
  }
  return out;
}

// Keeps exactly the programs with fewer than cfg.max_lines lines, in order.
inline std::vector<IrProgram> filter_by_length(const std::vector<IrProgram>& programs,
                                               const PreprocessConfig& cfg) {
  cfg.validate();
  std::vector<IrProgram> out;
  for (const auto& p : programs) {
    if (p.lines.size() < cfg.max_lines) out.push_back(p);
  }
  return out;
}

// Full pipeline: whitespace canonicalization, wrapper stripping, local
// renumbering, then the line-count filter.
inline std::vector<IrProgram> preprocess(const std::vector<IrProgram>& programs,
                                         const PreprocessConfig& cfg) {
  cfg.validate();
  std::vector<IrProgram> staged;
  staged.reserve(programs.size());
  for (const auto& p : programs) {
    validate_program(p);
    IrProgram q = canonicalize_whitespace(p);
    if (cfg.strip_user_functions) q = strip_user_functions(q);
    if (cfg.normalize_locals) q = normalize_locals(q);
    staged.push_back(std::move(q));
  }
  return filter_by_length(staged, cfg);
}

}  // namespace vulnir
