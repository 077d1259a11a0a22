#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "vulnir/errors.hpp"
#include "vulnir/fsio.hpp"
#include "vulnir/ir_program.hpp"

namespace vulnir {

// Dataset format is JSON Lines, one program per line:
//   {"id": str, "lines": [str,...], "label": 0|1, "vuln_lines": [int,...]}
// vuln_lines holds 0-based indices of the lines labeled vulnerable.

inline nlohmann::json program_to_json(const IrProgram& p) {
  std::vector<int> vuln_lines;
  for (std::size_t i = 0; i < p.line_labels.size(); ++i) {
    if (p.line_labels[i] == 1) vuln_lines.push_back(static_cast<int>(i));
  }
  return nlohmann::json{
      {"id", p.id}, {"lines", p.lines}, {"label", p.label}, {"vuln_lines", vuln_lines}};
}

inline IrProgram program_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  for (const char* key : {"id", "lines", "label", "vuln_lines"}) {
    if (!j.contains(key)) throw ParseError(std::string("record missing field '") + key + "'");
  }
  IrProgram p;
  if (!j.at("id").is_string()) throw ParseError("'id' must be a string");
  p.id = j.at("id").get<std::string>();
  if (!j.at("lines").is_array()) throw ParseError("'lines' must be an array");
  for (const auto& l : j.at("lines")) {
    if (!l.is_string()) throw ParseError("'lines' entries must be strings");
    p.lines.push_back(l.get<std::string>());
  }
  if (!j.at("label").is_number_integer()) throw ParseError("'label' must be an integer");
  p.label = j.at("label").get<int>();
  p.line_labels.assign(p.lines.size(), 0);
  if (!j.at("vuln_lines").is_array()) throw ParseError("'vuln_lines' must be an array");
  for (const auto& v : j.at("vuln_lines")) {
    if (!v.is_number_integer()) throw ParseError("'vuln_lines' entries must be integers");
    const long long idx = v.get<long long>();
    if (idx < 0 || idx >= static_cast<long long>(p.lines.size())) {
      throw InvariantViolation("program '" + p.id + "': vuln_lines index " + std::to_string(idx) +
                               " out of range for " + std::to_string(p.lines.size()) + " lines");
    }
    if (p.line_labels[static_cast<std::size_t>(idx)] == 1) {
      throw InvariantViolation("program '" + p.id + "': duplicate vuln_lines index " +
                               std::to_string(idx));
    }
    p.line_labels[static_cast<std::size_t>(idx)] = 1;
  }
  validate_program(p);
  return p;
}

inline std::vector<IrProgram> load_dataset(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<IrProgram> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    const std::string loc = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      out.push_back(program_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError(loc + e.what());
    } catch (const InvariantViolation& e) {
      throw InvariantViolation(loc + e.what());
    }
  }
  return out;
}

inline std::string serialize_dataset(const std::vector<IrProgram>& programs) {
  std::string out;
  for (const auto& p : programs) {
    out += program_to_json(p).dump();
    out += '\n';
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<IrProgram>& programs) {
  write_file_atomic(path, serialize_dataset(programs));
}

}  // namespace vulnir
