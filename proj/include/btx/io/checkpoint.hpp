#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "btx/core/param.hpp"
#include "btx/model/encoder.hpp"
#include "btx/model/extractor.hpp"

namespace btx::io {

// File layout:
//   "BTXE1\n"
//   "header_bytes <N>\n"
//   N bytes of JSON: kind, encoder config, extractor config, vocab
//   fingerprint, language table, max_len, tensor manifest (name, shape,
//   byte offset into the payload)
//   payload: little-endian float32 arrays in manifest order
inline constexpr std::string_view kCheckpointMagic = "BTXE1\n";

struct CheckpointMeta {
  // "pretrain" for encoder + MLM head, "extractor" for a span model.
  std::string kind = "pretrain";
  model::EncoderConfig encoder;
  std::optional<model::ExtractorConfig> extractor;
  std::string vocab_fingerprint;
  std::vector<std::string> languages;
  std::size_t max_len = 0;
  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  CheckpointMeta meta;
  ParamStore<float> params;
};

struct LoadOptions {
  // Refuse to load when set and different from the stored fingerprint.
  std::optional<std::string> expect_vocab_fingerprint;
  bool allow_fingerprint_mismatch = false;
};

// Throws NumericError when a tensor holds a non-finite value.
std::string serialize_checkpoint(const ParamStore<float>& store, const CheckpointMeta& meta);
// Throws FormatError naming the byte offset of the first problem.
Checkpoint parse_checkpoint(std::string_view bytes, const LoadOptions& options = {});

void save_checkpoint(const ParamStore<float>& store, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {});

ParamStore<float> clone_params(const ParamStore<float>& store);

// Copies every encoder tensor of `from` into `to`. Both configs must agree
// on everything but dropout. Returns the copied names.
std::vector<std::string> copy_encoder_params(const ParamStore<float>& from,
                                             const model::EncoderConfig& from_cfg,
                                             ParamStore<float>& to,
                                             const model::EncoderConfig& to_cfg);

}  // namespace btx::io
