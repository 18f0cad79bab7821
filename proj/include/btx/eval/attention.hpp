#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "btx/model/extractor.hpp"

namespace btx::eval {

// One attention grid: rows are source-segment positions [/s] s_1..s_m [/s],
// columns target-segment positions [/s] t_1..t_n [/s].
struct AttentionGrid {
  std::string label;  // "mean" or "head<i>"
  std::vector<std::string> row_tokens;
  std::vector<std::string> col_tokens;
  std::vector<std::vector<float>> values;
  bool operator==(const AttentionGrid&) const = default;
};

// Self-attention weights of `layer` for one Concat-mode example, averaged
// over heads, or one grid per head with `per_head`. Throws IndexError when
// the layer is out of range and PreconditionError for Attn models or
// source-free layouts.
std::vector<AttentionGrid> export_attention(const model::Extractor<float>& model,
                                            const data::LabeledExample& example,
                                            const text::Vocab& vocab, std::size_t layer,
                                            std::size_t max_len, bool per_head = false);

std::string format_attention_tsv(const std::vector<AttentionGrid>& grids);
std::vector<AttentionGrid> parse_attention_tsv(const std::string& text);
void write_attention_tsv(const std::filesystem::path& path, const std::vector<AttentionGrid>& grids);
std::vector<AttentionGrid> read_attention_tsv(const std::filesystem::path& path);

}  // namespace btx::eval
