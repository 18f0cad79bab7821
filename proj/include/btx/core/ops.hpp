#pragma once

// Differentiable layer set used by the encoder, the extractors and
// pre-training. Every op records its output on the tape together with an
// exact analytic backward.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "btx/core/tape.hpp"

namespace btx::ops {

// Additive stand-in for -inf on masked attention keys.
inline constexpr double kMaskedLogit = -1e9;

// y = x W (+ b); x [L x in], W [in x out], b [out].
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> b = std::nullopt);

// y = x W^T (+ b); W [out x in]. Used for the tied output projection.
template <typename T>
Var linear_nt(Tape<T>& tape, Var x, Var w, std::optional<Var> b = std::nullopt);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

// Rows of `table` selected by ids; `what` names the table in index errors.
template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::span<const std::int32_t> ids,
                const std::string& what);

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5));

// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
Var gelu(Tape<T>& tape, Var x);

template <typename T>
Var ffn(Tape<T>& tape, Var x, Var w1, Var b1, Var w2, Var b2);

// Inverted dropout; identity when p == 0.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, std::mt19937_64& rng);

// Sets column `col` to `value` on rows where mask[row] != 0; the gradient
// through those entries is zero.
template <typename T>
Var mask_column(Tape<T>& tape, Var x, std::span<const std::uint8_t> mask,
                std::size_t col, T value);

// Weighted softmax cross-entropy, sum_i w_i * -log softmax(logits_i)[t_i].
// With no weights every row gets 1/N (the mean). Rows with weight 0 are
// ignored entirely and their targets are not checked.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::int32_t> targets,
                          std::span<const T> row_weights = {});

// One attention problem inside packed row matrices: queries are rows
// [q_offset, q_offset + q_len) of Q_in, keys/values rows
// [k_offset, k_offset + k_len) of K_in/V_in. key_mask[j] != 0 excludes key j.
struct AttentionGroup {
  std::size_t q_offset = 0;
  std::size_t q_len = 0;
  std::size_t k_offset = 0;
  std::size_t k_len = 0;
  std::vector<std::uint8_t> key_mask;
};

template <typename T>
struct AttentionParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Per-group attention weights, each shaped [heads x q_len x k_len].
template <typename T>
using AttentionWeights = std::vector<Tensor<T>>;

template <typename T>
Var multi_head_attention(Tape<T>& tape, Var q_in, Var k_in, Var v_in,
                         const AttentionParams<T>& params,
                         std::span<const AttentionGroup> groups, std::size_t heads,
                         AttentionWeights<T>* weights_out = nullptr);

// Single-problem form: all rows of q_in attend over all rows of k_in.
template <typename T>
Var multi_head_attention(Tape<T>& tape, Var q_in, Var k_in, Var v_in,
                         const AttentionParams<T>& params,
                         std::span<const std::uint8_t> key_mask, std::size_t heads,
                         AttentionWeights<T>* weights_out = nullptr);

// Row-wise softmax of a plain tensor; used by decoders and tests.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace btx::ops
