#pragma once

#include <string>
#include <vector>

#include "vulnir/errors.hpp"

namespace vulnir {

// One sliced LLVM-IR program: text lines, a program-level label and one
// binary label per line. Line labels mark vulnerability sites; they ride
// along through every transformation but are never predicted.
struct IrProgram {
  std::string id;
  std::vector<std::string> lines;
  int label = 0;
  std::vector<int> line_labels;

  bool operator==(const IrProgram&) const = default;
};

inline void validate_program(const IrProgram& p) {
  if (p.line_labels.size() != p.lines.size()) {
    throw InvariantViolation("program '" + p.id + "': " + std::to_string(p.line_labels.size()) +
                             " line labels for " + std::to_string(p.lines.size()) + " lines");
  }
  if (p.label != 0 && p.label != 1) {
    throw InvariantViolation("program '" + p.id + "': label must be 0 or 1");
  }
  bool any_line_vulnerable = false;
  for (std::size_t i = 0; i < p.line_labels.size(); ++i) {
    const int y = p.line_labels[i];
    if (y != 0 && y != 1) {
      throw InvariantViolation("program '" + p.id + "': line label at " + std::to_string(i) +
                               " must be 0 or 1");
    }
    any_line_vulnerable |= (y == 1);
    if (p.lines[i].find('\n') != std::string::npos) {
      throw InvariantViolation("program '" + p.id + "': line " + std::to_string(i) +
                               " contains an embedded newline");
    }
  }
  if (any_line_vulnerable && p.label != 1) {
    throw InvariantViolation("program '" + p.id +
                             "': has a vulnerable line but program label is 0");
  }
}

}  // namespace vulnir
