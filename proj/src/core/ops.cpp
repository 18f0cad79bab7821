#include "btx/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "btx/kernels/kernels.hpp"

namespace btx::ops {
namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void add_bias_rows(Tensor<T>& y, const Tensor<T>& bias) {
  const std::size_t n = y.cols();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    T* row = y.row(i);
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

template <typename T>
void accumulate_column_sums(const Tensor<T>& g, Tensor<T>& db) {
  const std::size_t n = g.cols();
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const T* row = g.row(i);
    for (std::size_t j = 0; j < n; ++j) db[j] += row[j];
  }
}

template <typename T>
void check_bias(const Tensor<T>& b, std::size_t out, const char* what) {
  if (b.rank() != 1 || b.dim(0) != out) {
    throw DimensionError(std::string(what) + ": bias shape " + shape_str(b.shape()) +
                         " does not match output width " + std::to_string(out));
  }
}

}  // namespace

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> b) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require_rank(xv, 2, "linear input");
  require_rank(wv, 2, "linear weight");
  if (xv.cols() != wv.rows()) {
    throw DimensionError("linear: input shape " + shape_str(xv.shape()) +
                         " incompatible with weight shape " + shape_str(wv.shape()));
  }
  const std::size_t rows = xv.rows();
  const std::size_t in = wv.rows();
  const std::size_t out = wv.cols();
  Tensor<T> y({rows, out});
  kernels::gemm_nn(rows, out, in, xv.data(), wv.data(), y.data());
  if (b) {
    check_bias(tape.value(*b), out, "linear");
    add_bias_rows(y, tape.value(*b));
  }
  return tape.record(std::move(y), {x, w, b.value_or(x)},
                     [&tape, x, w, b, rows, in, out](const Tensor<T>& g) {
                       if (tape.requires_grad(x)) {
                         kernels::gemm_nt(rows, in, out, g.data(), tape.value(w).data(),
                                          tape.grad(x).data(), true);
                       }
                       if (tape.requires_grad(w)) {
                         kernels::gemm_tn(in, out, rows, tape.value(x).data(), g.data(),
                                          tape.grad(w).data(), true);
                       }
                       if (b && tape.requires_grad(*b)) accumulate_column_sums(g, tape.grad(*b));
                     });
}

template <typename T>
Var linear_nt(Tape<T>& tape, Var x, Var w, std::optional<Var> b) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require_rank(xv, 2, "linear_nt input");
  require_rank(wv, 2, "linear_nt weight");
  if (xv.cols() != wv.cols()) {
    throw DimensionError("linear_nt: input shape " + shape_str(xv.shape()) +
                         " incompatible with transposed weight shape " + shape_str(wv.shape()));
  }
  const std::size_t rows = xv.rows();
  const std::size_t in = wv.cols();
  const std::size_t out = wv.rows();
  Tensor<T> y({rows, out});
  kernels::gemm_nt(rows, out, in, xv.data(), wv.data(), y.data());
  if (b) {
    check_bias(tape.value(*b), out, "linear_nt");
    add_bias_rows(y, tape.value(*b));
  }
  return tape.record(std::move(y), {x, w, b.value_or(x)},
                     [&tape, x, w, b, rows, in, out](const Tensor<T>& g) {
                       if (tape.requires_grad(x)) {
                         kernels::gemm_nn(rows, in, out, g.data(), tape.value(w).data(),
                                          tape.grad(x).data(), true);
                       }
                       if (tape.requires_grad(w)) {
                         kernels::gemm_tn(out, in, rows, g.data(), tape.value(x).data(),
                                          tape.grad(w).data(), true);
                       }
                       if (b && tape.requires_grad(*b)) accumulate_column_sums(g, tape.grad(*b));
                     });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) +
                         " differ");
  }
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
  return tape.record(std::move(y), {a, b}, [&tape, a, b](const Tensor<T>& g) {
    for (const Var in : {a, b}) {
      if (!tape.requires_grad(in)) continue;
      Tensor<T>& gi = tape.grad(in);
      for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor<T> y = tape.value(x);
  for (T& v : y.values()) v *= factor;
  return tape.record(std::move(y), {x}, [&tape, x, factor](const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += factor * g[i];
  });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var table, std::span<const std::int32_t> ids,
                const std::string& what) {
  const Tensor<T>& tv = tape.value(table);
  require_rank(tv, 2, "gather_rows table");
  if (ids.empty()) throw DimensionError("gather_rows: empty id list for " + what);
  const std::size_t width = tv.cols();
  const auto limit = static_cast<std::int64_t>(tv.rows());
  Tensor<T> y({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= limit) {
      throw IndexError(what + ": id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " outside table of " + std::to_string(limit) + " rows");
    }
    std::copy_n(tv.row(static_cast<std::size_t>(ids[i])), width, y.row(i));
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return tape.record(std::move(y), {table},
                     [&tape, table, kept = std::move(kept), width](const Tensor<T>& g) {
                       Tensor<T>& gt = tape.grad(table);
                       for (std::size_t i = 0; i < kept.size(); ++i) {
                         T* dst = gt.row(static_cast<std::size_t>(kept[i]));
                         const T* src = g.row(i);
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  require_rank(xv, 2, "layer_norm input");
  const std::size_t rows = xv.rows();
  const std::size_t d = xv.cols();
  if (gv.shape() != Shape{d} || bv.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain " + shape_str(gv.shape()) + " / bias " +
                         shape_str(bv.shape()) + " do not match input " + shape_str(xv.shape()));
  }
  if (!(eps > T(0))) throw PreconditionError("layer_norm: eps must be positive");
  Tensor<T> xhat({rows, d});
  std::vector<T> inv_std(rows);
  Tensor<T> y({rows, d});
  for (std::size_t i = 0; i < rows; ++i) {
    const T* xr = xv.row(i);
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    T* hr = xhat.row(i);
    T* yr = y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * is;
      yr[j] = gv[j] * hr[j] + bv[j];
    }
  }
  return tape.record(
      std::move(y), {x, gamma, beta},
      [&tape, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
       d](const Tensor<T>& g) {
        const Tensor<T>& gv = tape.value(gamma);
        if (tape.requires_grad(gamma) || tape.requires_grad(beta)) {
          Tensor<T>& dg = tape.grad(gamma);
          Tensor<T>& db = tape.grad(beta);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += g(i, j) * xhat(i, j);
              db[j] += g(i, j);
            }
          }
        }
        if (!tape.requires_grad(x)) return;
        Tensor<T>& dx = tape.grad(x);
        std::vector<T> dh(d);
        for (std::size_t i = 0; i < rows; ++i) {
          T mean_dh = 0;
          T mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = g(i, j) * gv[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * xhat(i, j);
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            dx(i, j) += inv_std[i] * (dh[j] - mean_dh - xhat(i, j) * mean_dh_h);
          }
        }
      });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> y = tape.value(x);
  for (T& v : y.values()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  return tape.record(std::move(y), {x}, [&tape, x](const Tensor<T>& g) {
    constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    const Tensor<T>& xv = tape.value(x);
    Tensor<T>& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var ffn(Tape<T>& tape, Var x, Var w1, Var b1, Var w2, Var b2) {
  return linear(tape, gelu(tape, linear(tape, x, w1, b1)), w2, b2);
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw PreconditionError("dropout rate must be < 1");
  const Tensor<T>& xv = tape.value(x);
  std::bernoulli_distribution keep(1.0 - p);
  const T factor = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(xv.numel());
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(rng) ? factor : T(0);
    y[i] = xv[i] * mask[i];
  }
  return tape.record(std::move(y), {x}, [&tape, x, mask = std::move(mask)](const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * mask[i];
  });
}

template <typename T>
Var mask_column(Tape<T>& tape, Var x, std::span<const std::uint8_t> mask, std::size_t col,
                T value) {
  const Tensor<T>& xv = tape.value(x);
  require_rank(xv, 2, "mask_column input");
  if (mask.size() != xv.rows() || col >= xv.cols()) {
    throw DimensionError("mask_column: mask of " + std::to_string(mask.size()) + " rows, column " +
                         std::to_string(col) + " vs input " + shape_str(xv.shape()));
  }
  Tensor<T> y = xv;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) y(i, col) = value;
  }
  std::vector<std::uint8_t> kept(mask.begin(), mask.end());
  return tape.record(std::move(y), {x}, [&tape, x, kept = std::move(kept), col](const Tensor<T>& g) {
    Tensor<T>& gx = tape.grad(x);
    const std::size_t n = g.cols();
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j == col && kept[i] != 0) continue;
        gx(i, j) += g(i, j);
      }
    }
  });
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::int32_t> targets,
                          std::span<const T> row_weights) {
  const Tensor<T>& lv = tape.value(logits);
  require_rank(lv, 2, "softmax_cross_entropy logits");
  const std::size_t n = lv.rows();
  const std::size_t c = lv.cols();
  if (targets.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(lv.shape()));
  }
  if (!row_weights.empty() && row_weights.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(row_weights.size()) +
                         " row weights for " + std::to_string(n) + " rows");
  }
  std::vector<T> weights(n, T(1) / static_cast<T>(n));
  if (!row_weights.empty()) weights.assign(row_weights.begin(), row_weights.end());

  Tensor<T> probs({n, c});
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == T(0)) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) +
                       " at row " + std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    }
    const T* row = lv.row(i);
    const T mx = *std::max_element(row, row + c);
    T sum = 0;
    T* pr = probs.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      pr[j] = std::exp(row[j] - mx);
      sum += pr[j];
    }
    for (std::size_t j = 0; j < c; ++j) pr[j] /= sum;
    const auto t = static_cast<std::size_t>(targets[i]);
    loss += weights[i] * ((mx + std::log(sum)) - row[t]);
  }
  std::vector<std::int32_t> kept(targets.begin(), targets.end());
  return tape.record(Tensor<T>({1}, {loss}), {logits},
                     [&tape, logits, probs = std::move(probs), kept = std::move(kept),
                      weights = std::move(weights), c](const Tensor<T>& g) {
                       Tensor<T>& gl = tape.grad(logits);
                       const T up = g[0];
                       for (std::size_t i = 0; i < kept.size(); ++i) {
                         if (weights[i] == T(0)) continue;
                         const T w = up * weights[i];
                         for (std::size_t j = 0; j < c; ++j) {
                           const T onehot = j == static_cast<std::size_t>(kept[i]) ? T(1) : T(0);
                           gl(i, j) += w * (probs(i, j) - onehot);
                         }
                       }
                     });
}

namespace {

template <typename T>
void copy_head(const Tensor<T>& src, std::size_t offset, std::size_t len, std::size_t col,
               std::size_t width, std::vector<T>& dst) {
  dst.resize(len * width);
  for (std::size_t i = 0; i < len; ++i) {
    std::copy_n(src.row(offset + i) + col, width, dst.data() + i * width);
  }
}

template <typename T>
void add_head(Tensor<T>& dst, std::size_t offset, std::size_t len, std::size_t col,
              std::size_t width, const std::vector<T>& src) {
  for (std::size_t i = 0; i < len; ++i) {
    T* out = dst.row(offset + i) + col;
    for (std::size_t j = 0; j < width; ++j) out[j] += src[i * width + j];
  }
}

void check_groups(std::span<const AttentionGroup> groups, std::size_t q_rows, std::size_t k_rows) {
  for (const AttentionGroup& g : groups) {
    if (g.q_len == 0 || g.k_len == 0 || g.q_offset + g.q_len > q_rows ||
        g.k_offset + g.k_len > k_rows) {
      throw DimensionError("attention group rows [" + std::to_string(g.q_offset) + "+" +
                           std::to_string(g.q_len) + "] x [" + std::to_string(g.k_offset) + "+" +
                           std::to_string(g.k_len) + "] outside inputs of " +
                           std::to_string(q_rows) + " x " + std::to_string(k_rows) + " rows");
    }
    if (!g.key_mask.empty() && g.key_mask.size() != g.k_len) {
      throw DimensionError("attention key mask of length " + std::to_string(g.key_mask.size()) +
                           " for " + std::to_string(g.k_len) + " keys");
    }
    if (!g.key_mask.empty() &&
        std::all_of(g.key_mask.begin(), g.key_mask.end(), [](std::uint8_t m) { return m != 0; })) {
      throw PreconditionError("empty attention context");
    }
  }
}

// softmax(scale * Q K^T + mask) V per group and head, on already-projected
// Q, K, V. Heads are column blocks of width d / heads.
template <typename T>
Var attention_core(Tape<T>& tape, Var q, Var k, Var v, std::span<const AttentionGroup> groups_in,
                   std::size_t heads, AttentionWeights<T>* weights_out) {
  const Tensor<T>& qv = tape.value(q);
  const Tensor<T>& kv = tape.value(k);
  const Tensor<T>& vv = tape.value(v);
  const std::size_t d = qv.cols();
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  check_groups(groups_in, qv.rows(), kv.rows());

  auto probs = std::make_shared<std::vector<Tensor<T>>>();
  probs->reserve(groups_in.size());
  Tensor<T> out({qv.rows(), d});
  std::vector<T> qh, kh, vh, oh;
  for (const AttentionGroup& g : groups_in) {
    Tensor<T> p({heads, g.q_len, g.k_len});
    oh.assign(g.q_len * dh, T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      copy_head(qv, g.q_offset, g.q_len, h * dh, dh, qh);
      copy_head(kv, g.k_offset, g.k_len, h * dh, dh, kh);
      copy_head(vv, g.k_offset, g.k_len, h * dh, dh, vh);
      T* ph = p.data() + h * g.q_len * g.k_len;
      kernels::gemm_nt(g.q_len, g.k_len, dh, qh.data(), kh.data(), ph);
      for (std::size_t i = 0; i < g.q_len; ++i) {
        T* row = ph + i * g.k_len;
        for (std::size_t j = 0; j < g.k_len; ++j) {
          row[j] *= scale;
          if (!g.key_mask.empty() && g.key_mask[j] != 0) row[j] += static_cast<T>(kMaskedLogit);
        }
        const T mx = *std::max_element(row, row + g.k_len);
        T sum = 0;
        for (std::size_t j = 0; j < g.k_len; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < g.k_len; ++j) row[j] /= sum;
      }
      kernels::gemm_nn(g.q_len, dh, g.k_len, ph, vh.data(), oh.data());
      for (std::size_t i = 0; i < g.q_len; ++i) {
        std::copy_n(oh.data() + i * dh, dh, out.row(g.q_offset + i) + h * dh);
      }
    }
    probs->push_back(std::move(p));
  }
  if (weights_out != nullptr) *weights_out = *probs;

  std::vector<AttentionGroup> groups(groups_in.begin(), groups_in.end());
  return tape.record(
      std::move(out), {q, k, v},
      [&tape, q, k, v, probs, groups = std::move(groups), heads, dh, scale](const Tensor<T>& g) {
        const Tensor<T>& qv = tape.value(q);
        const Tensor<T>& kv = tape.value(k);
        const Tensor<T>& vv = tape.value(v);
        const bool need_q = tape.requires_grad(q);
        const bool need_k = tape.requires_grad(k);
        const bool need_v = tape.requires_grad(v);
        std::vector<T> qh, kh, vh, goh, dp, dqh, dkh, dvh;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          const AttentionGroup& grp = groups[gi];
          const std::size_t ql = grp.q_len;
          const std::size_t kl = grp.k_len;
          for (std::size_t h = 0; h < heads; ++h) {
            const T* ph = (*probs)[gi].data() + h * ql * kl;
            copy_head(qv, grp.q_offset, ql, h * dh, dh, qh);
            copy_head(kv, grp.k_offset, kl, h * dh, dh, kh);
            copy_head(vv, grp.k_offset, kl, h * dh, dh, vh);
            copy_head(g, grp.q_offset, ql, h * dh, dh, goh);
            if (need_v) {
              dvh.assign(kl * dh, T(0));
              kernels::gemm_tn(kl, dh, ql, ph, goh.data(), dvh.data());
              add_head(tape.grad(v), grp.k_offset, kl, h * dh, dh, dvh);
            }
            if (!need_q && !need_k) continue;
            dp.assign(ql * kl, T(0));
            kernels::gemm_nt(ql, kl, dh, goh.data(), vh.data(), dp.data());
            for (std::size_t i = 0; i < ql; ++i) {
              T* dr = dp.data() + i * kl;
              const T* pr = ph + i * kl;
              T dotp = 0;
              for (std::size_t j = 0; j < kl; ++j) dotp += dr[j] * pr[j];
              for (std::size_t j = 0; j < kl; ++j) dr[j] = pr[j] * (dr[j] - dotp) * scale;
            }
            if (need_q) {
              dqh.assign(ql * dh, T(0));
              kernels::gemm_nn(ql, dh, kl, dp.data(), kh.data(), dqh.data());
              add_head(tape.grad(q), grp.q_offset, ql, h * dh, dh, dqh);
            }
            if (need_k) {
              dkh.assign(kl * dh, T(0));
              kernels::gemm_tn(kl, dh, ql, dp.data(), qh.data(), dkh.data());
              add_head(tape.grad(k), grp.k_offset, kl, h * dh, dh, dkh);
            }
          }
        }
      });
}

}  // namespace

template <typename T>
Var multi_head_attention(Tape<T>& tape, Var q_in, Var k_in, Var v_in,
                         const AttentionParams<T>& params,
                         std::span<const AttentionGroup> groups, std::size_t heads,
                         AttentionWeights<T>* weights_out) {
  const Tensor<T>& qv = tape.value(q_in);
  const Tensor<T>& kv = tape.value(k_in);
  const Tensor<T>& vv = tape.value(v_in);
  require_rank(qv, 2, "attention query input");
  require_rank(kv, 2, "attention key input");
  require_rank(vv, 2, "attention value input");
  if (kv.shape() != vv.shape() || qv.cols() != kv.cols()) {
    throw DimensionError("attention: query " + shape_str(qv.shape()) + ", key " +
                         shape_str(kv.shape()) + ", value " + shape_str(vv.shape()) +
                         " are incompatible");
  }
  if (heads == 0 || qv.cols() % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(qv.cols()) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  const Var q = linear(tape, q_in, params.wq, params.bq);
  const Var k = linear(tape, k_in, params.wk, params.bk);
  const Var v = linear(tape, v_in, params.wv, params.bv);
  const Var ctx = attention_core(tape, q, k, v, groups, heads, weights_out);
  return linear(tape, ctx, params.wo, params.bo);
}

template <typename T>
Var multi_head_attention(Tape<T>& tape, Var q_in, Var k_in, Var v_in,
                         const AttentionParams<T>& params,
                         std::span<const std::uint8_t> key_mask, std::size_t heads,
                         AttentionWeights<T>* weights_out) {
  AttentionGroup g;
  g.q_len = tape.value(q_in).rows();
  g.k_len = tape.value(k_in).rows();
  g.key_mask.assign(key_mask.begin(), key_mask.end());
  return multi_head_attention(tape, q_in, k_in, v_in, params, std::span<const AttentionGroup>(&g, 1),
                              heads, weights_out);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> p = logits;
  const std::size_t c = p.cols();
  for (std::size_t i = 0; i < p.rows(); ++i) {
    T* row = p.row(i);
    const T mx = *std::max_element(row, row + c);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
  return p;
}

#define BTX_INSTANTIATE_OPS(T)                                                                  \
  template Var linear<T>(Tape<T>&, Var, Var, std::optional<Var>);                               \
  template Var linear_nt<T>(Tape<T>&, Var, Var, std::optional<Var>);                            \
  template Var add<T>(Tape<T>&, Var, Var);                                                      \
  template Var scale<T>(Tape<T>&, Var, T);                                                      \
  template Var gather_rows<T>(Tape<T>&, Var, std::span<const std::int32_t>, const std::string&); \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, T);                                       \
  template Var gelu<T>(Tape<T>&, Var);                                                          \
  template Var ffn<T>(Tape<T>&, Var, Var, Var, Var, Var);                                       \
  template Var dropout<T>(Tape<T>&, Var, double, std::mt19937_64&);                             \
  template Var mask_column<T>(Tape<T>&, Var, std::span<const std::uint8_t>, std::size_t, T);    \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const std::int32_t>,           \
                                        std::span<const T>);                                    \
  template Var multi_head_attention<T>(Tape<T>&, Var, Var, Var, const AttentionParams<T>&,      \
                                       std::span<const AttentionGroup>, std::size_t,            \
                                       AttentionWeights<T>*);                                   \
  template Var multi_head_attention<T>(Tape<T>&, Var, Var, Var, const AttentionParams<T>&,      \
                                       std::span<const std::uint8_t>, std::size_t,              \
                                       AttentionWeights<T>*);                                   \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);

BTX_INSTANTIATE_OPS(float)
BTX_INSTANTIATE_OPS(double)

}  // namespace btx::ops
