#pragma once

// Long-double recomputation of the encoder from raw parameter tensors, built
// only from the scalar oracles in oracle.hpp.

#include <string>

#include "btx/core/param.hpp"
#include "btx/model/encoder.hpp"
#include "test_util.hpp"

namespace oracle {

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat rows_of(const btx::Tensor<double>& table, const std::vector<std::int32_t>& ids) {
  const auto m = testutil::to_mat(table);
  Mat out;
  for (const auto i : ids) out.push_back(m[static_cast<std::size_t>(i)]);
  return out;
}

inline AttnWeights attn_weights(const btx::ParamStore<double>& s, const std::string& p) {
  auto M = [&](const char* n) { return testutil::to_mat(s.get(p + n).value); };
  auto V = [&](const char* n) { return testutil::to_vec(s.get(p + n).value); };
  return {M("wq"), M("wk"), M("wv"), M("wo"), V("bq"), V("bk"), V("bv"), V("bo")};
}

inline Mat embed(const btx::ParamStore<double>& s, const btx::model::SegmentedInput& in) {
  return add(add(rows_of(s.get("encoder.embed.token").value, in.token_ids),
                 rows_of(s.get("encoder.embed.position").value, in.position_ids)),
             rows_of(s.get("encoder.embed.language").value, in.language_ids));
}

inline Mat encode(const btx::ParamStore<double>& s, const btx::model::EncoderConfig& cfg, Mat x,
                  const std::vector<std::uint8_t>& key_mask) {
  auto V = [&](const std::string& n) { return testutil::to_vec(s.get(n).value); };
  auto M = [&](const std::string& n) { return testutil::to_mat(s.get(n).value); };
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    x = layer_norm(add(x, attention(x, x, x, attn_weights(s, p + "attn."), key_mask, cfg.heads)),
                   V(p + "ln1.gamma"), V(p + "ln1.beta"), 1e-5L);
    x = layer_norm(add(x, ffn(x, M(p + "ffn.w1"), V(p + "ffn.b1"), M(p + "ffn.w2"), V(p + "ffn.b2"))),
                   V(p + "ln2.gamma"), V(p + "ln2.beta"), 1e-5L);
  }
  return x;
}

inline Mat forward(const btx::ParamStore<double>& s, const btx::model::EncoderConfig& cfg,
                   const btx::model::SegmentedInput& in) {
  bool any = false;
  for (auto p : in.padding) any = any || p;
  return encode(s, cfg, embed(s, in), any ? in.padding : std::vector<std::uint8_t>{});
}

}  // namespace oracle
