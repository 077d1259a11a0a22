#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vulnir/errors.hpp"
#include "vulnir/fsio.hpp"
#include "vulnir/model.hpp"
#include "vulnir/vocabulary.hpp"

namespace vulnir {

// Checkpoint layout:
//   bytes 0..7    magic "VULNIRCK"
//   bytes 8..15   u64 little-endian manifest length
//   manifest      JSON: format/version/precision/model_config/vocabulary/tensors
//   payload       tensor data, row-major little-endian IEEE-754, in manifest order
inline constexpr char kCheckpointMagic[8] = {'V', 'U', 'L', 'N', 'I', 'R', 'C', 'K'};
inline constexpr std::int32_t kCheckpointVersion = 1;

namespace detail {

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "f32" : "f64";
}

inline std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(v & 0xff));
    v >>= 8;
  }
}

}  // namespace detail

template <typename Scalar>
void save_checkpoint(const TransformerModel<Scalar>& model, const Vocabulary& vocab,
                     const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  std::uint64_t offset = 0;
  for_each_parameter(model, [&](const std::string& name, const Mat<Scalar>& t) {
    const auto bytes = static_cast<std::uint64_t>(t.size()) * sizeof(Scalar);
    tensors.push_back({{"name", name},
                       {"rows", t.rows()},
                       {"cols", t.cols()},
                       {"dtype", detail::dtype_name<Scalar>()},
                       {"offset", offset}});
    payload.append(reinterpret_cast<const char*>(t.data()), bytes);
    offset += bytes;
  });

  nlohmann::json manifest{{"format", "vulnir-checkpoint"},
                          {"version", kCheckpointVersion},
                          {"precision", detail::dtype_name<Scalar>()},
                          {"model_config", model.cfg},
                          {"vocabulary", vocab.tokens()},
                          {"tensors", std::move(tensors)}};
  const std::string manifest_str = manifest.dump();

  std::string out;
  out.reserve(16 + manifest_str.size() + payload.size());
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::append_u64_le(out, manifest_str.size());
  out += manifest_str;
  out += payload;
  write_file_atomic(path, out);
}

namespace detail {

inline nlohmann::json parse_checkpoint_manifest(const std::string& raw,
                                                const std::filesystem::path& path,
                                                std::size_t& payload_start) {
  if (raw.size() < 16 || std::memcmp(raw.data(), kCheckpointMagic, 8) != 0) {
    throw ParseError(path.string() + ": not a checkpoint file");
  }
  const auto manifest_len =
      read_u64_le(reinterpret_cast<const unsigned char*>(raw.data()) + 8);
  if (16 + manifest_len > raw.size()) {
    throw ParseError(path.string() + ": truncated checkpoint manifest");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(raw.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad checkpoint manifest: " + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != "vulnir-checkpoint") {
    throw ParseError(path.string() + ": unrecognized checkpoint format");
  }
  payload_start = 16 + static_cast<std::size_t>(manifest_len);
  return manifest;
}

}  // namespace detail

// Reads only the header, for precision dispatch before a typed load.
inline Precision checkpoint_precision(const std::filesystem::path& path) {
  std::size_t payload_start = 0;
  const auto manifest = detail::parse_checkpoint_manifest(read_file(path), path, payload_start);
  const auto p = manifest.value("precision", "");
  if (p == "f32") return Precision::Single;
  if (p == "f64") return Precision::Double;
  throw ParseError(path.string() + ": unknown checkpoint precision '" + p + "'");
}

template <typename Scalar>
struct Checkpoint {
  TransformerModel<Scalar> model;
  Vocabulary vocab;
};

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  const auto raw = read_file(path);
  std::size_t payload_start = 0;
  const auto manifest = detail::parse_checkpoint_manifest(raw, path, payload_start);

  try {
    if (manifest.at("precision").get<std::string>() != detail::dtype_name<Scalar>()) {
      throw ParseError(path.string() + ": checkpoint precision is " +
                       manifest.at("precision").get<std::string>() + ", expected " +
                       detail::dtype_name<Scalar>());
    }

    Vocabulary vocab;
    const auto tokens = manifest.at("vocabulary").get<std::vector<std::string>>();
    if (tokens.size() < static_cast<std::size_t>(kNumSpecialTokens)) {
      throw ParseError(path.string() + ": checkpoint vocabulary is missing special tokens");
    }
    for (std::int32_t i = 0; i < kNumSpecialTokens; ++i) {
      if (tokens[static_cast<std::size_t>(i)] != kSpecialTokens[static_cast<std::size_t>(i)]) {
        throw ParseError(path.string() + ": checkpoint vocabulary special tokens are wrong");
      }
    }
    for (std::size_t i = kNumSpecialTokens; i < tokens.size(); ++i) {
      try {
        vocab.add_token(tokens[i]);
      } catch (const Error& e) {
        throw ParseError(path.string() + ": bad checkpoint vocabulary: " + e.what());
      }
    }

    const auto cfg = manifest.at("model_config").get<ModelConfig>();
    cfg.validate();
    if (cfg.vocab_size != vocab.size()) {
      throw ParseError(path.string() + ": checkpoint vocab_size " +
                       std::to_string(cfg.vocab_size) + " does not match embedded vocabulary of " +
                       std::to_string(vocab.size()));
    }

    struct TensorEntry {
      std::int64_t rows, cols;
      std::uint64_t offset;
    };
    std::unordered_map<std::string, TensorEntry> entries;
    for (const auto& t : manifest.at("tensors")) {
      if (t.at("dtype").get<std::string>() != detail::dtype_name<Scalar>()) {
        throw ParseError(path.string() + ": tensor dtype mismatch");
      }
      entries[t.at("name").get<std::string>()] = {t.at("rows").get<std::int64_t>(),
                                                  t.at("cols").get<std::int64_t>(),
                                                  t.at("offset").get<std::uint64_t>()};
    }

    Checkpoint<Scalar> ckpt{TransformerModel<Scalar>(cfg, 0), std::move(vocab)};
    for_each_parameter(ckpt.model, [&](const std::string& name, Mat<Scalar>& t) {
      const auto it = entries.find(name);
      if (it == entries.end()) {
        throw ParseError(path.string() + ": checkpoint is missing tensor '" + name + "'");
      }
      const auto& e = it->second;
      if (e.rows != t.rows() || e.cols != t.cols()) {
        throw ParseError(path.string() + ": tensor '" + name + "' has shape " +
                         std::to_string(e.rows) + "x" + std::to_string(e.cols) + ", expected " +
                         std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
      }
      const auto bytes = static_cast<std::uint64_t>(t.size()) * sizeof(Scalar);
      if (payload_start + e.offset + bytes > raw.size()) {
        throw ParseError(path.string() + ": tensor '" + name + "' extends past end of file");
      }
      std::memcpy(t.data(), raw.data() + payload_start + e.offset, bytes);
    });
    if (entries.size() != [&] {
          std::size_t n = 0;
          for_each_parameter(ckpt.model, [&n](const std::string&, const Mat<Scalar>&) { ++n; });
          return n;
        }()) {
      throw ParseError(path.string() + ": checkpoint has extra tensors");
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad checkpoint manifest: " + e.what());
  }
}

}  // namespace vulnir
