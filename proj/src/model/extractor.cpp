#include "btx/model/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "btx/core/errors.hpp"

namespace btx::model {

using text::Vocab;

namespace {

constexpr const char* kFusionNames[] = {"fusion.attn.wq", "fusion.attn.bq", "fusion.attn.wk",
                                        "fusion.attn.bk", "fusion.attn.wv", "fusion.attn.bv",
                                        "fusion.attn.wo", "fusion.attn.bo", "fusion.ln.gamma",
                                        "fusion.ln.beta", "fusion.ffn.w1",  "fusion.ffn.b1",
                                        "fusion.ffn.w2",  "fusion.ffn.b2"};

Shape fusion_shape(const std::string& name, const EncoderConfig& enc) {
  const std::size_t d = enc.d;
  if (name == "fusion.ffn.w1") return {d, enc.d_ff};
  if (name == "fusion.ffn.b1") return {enc.d_ff};
  if (name == "fusion.ffn.w2") return {enc.d_ff, d};
  if (name.find(".w") != std::string::npos) return {d, d};
  return {d};
}

ExtractorInput layout_ids(std::span<const std::int32_t> src, std::span<const std::int32_t> tgt,
                          std::int32_t src_lang, std::int32_t tgt_lang, const ExtractorConfig& cfg,
                          std::size_t max_len, std::optional<Span> local_gold) {
  ExtractorInput in;
  in.tgt_len = tgt.size();
  if (cfg.mode == ExtractorMode::concat) {
    auto layout = build_concat_input(src, tgt, src_lang, tgt_lang, cfg.drop_source, max_len);
    in.target = std::move(layout.input);
    in.tgt_begin = layout.tgt_offset;
  } else {
    in.source = make_mono_input(src, src_lang, max_len);
    in.target = make_mono_input(tgt, tgt_lang, max_len);
    in.tgt_begin = 1;
  }
  if (local_gold) {
    if (local_gold->first > local_gold->second || local_gold->second >= tgt.size()) {
      throw IndexError("gold span [" + std::to_string(local_gold->first) + ", " +
                       std::to_string(local_gold->second) + "] outside a sentence of " +
                       std::to_string(tgt.size()) + " tokens");
    }
    in.gold = {local_gold->first + in.tgt_begin, local_gold->second + in.tgt_begin};
  }
  return in;
}

template <typename T>
Tensor<double> rows_to_double(const Tensor<T>& probs, std::size_t offset, std::size_t len) {
  Tensor<double> out({len, 2});
  for (std::size_t i = 0; i < len; ++i) {
    out(i, 0) = probs(offset + i, 0);
    out(i, 1) = probs(offset + i, 1);
  }
  return out;
}

}  // namespace

std::string_view mode_name(ExtractorMode mode) {
  return mode == ExtractorMode::attn ? "attn" : "concat";
}

ExtractorMode parse_mode(std::string_view name) {
  if (name == "attn") return ExtractorMode::attn;
  if (name == "concat") return ExtractorMode::concat;
  throw PreconditionError("unknown extractor mode: " + std::string(name));
}

ConcatLayout build_concat_input(std::span<const std::int32_t> term,
                                std::span<const std::int32_t> sentence, std::int32_t src_lang,
                                std::int32_t tgt_lang, bool drop_source, std::size_t max_len) {
  if (drop_source) {
    if (sentence.empty()) throw PreconditionError("empty target sentence");
    return {make_mono_input(sentence, tgt_lang, max_len), 1};
  }
  auto in = make_tlm_pair(term, sentence, src_lang, tgt_lang, max_len);
  return {std::move(in), term.size() + 2};
}

ExtractorInput make_extractor_input(const data::LabeledExample& ex, const text::Vocab& vocab,
                                    const ExtractorConfig& cfg, std::size_t max_len) {
  const auto src = vocab.encode(ex.src_term_tokens);
  const auto tgt = vocab.encode(ex.tgt_sentence_tokens);
  return layout_ids(src, tgt, vocab.lang_id(ex.src_lang), vocab.lang_id(ex.tgt_lang), cfg,
                    max_len, ex.polarity == data::Polarity::positive ? ex.span : std::nullopt);
}

template <typename T>
Var fuse_attn(Tape<T>& tape, Var h_src, Var h_tgt, const FusionParams<T>& block,
              std::span<const ops::AttentionGroup> groups, std::size_t heads) {
  if (tape.value(h_src).cols() != tape.value(h_tgt).cols()) {
    throw DimensionError("fuse_attn: source width " + std::to_string(tape.value(h_src).cols()) +
                         " differs from target width " + std::to_string(tape.value(h_tgt).cols()));
  }
  const Var f = ops::multi_head_attention(tape, h_tgt, h_src, h_src, block.attn, groups, heads);
  const Var n = ops::layer_norm(tape, ops::add(tape, h_tgt, f), block.ln_gamma, block.ln_beta);
  return ops::ffn(tape, n, block.w1, block.b1, block.w2, block.b2);
}

template <typename T>
std::pair<Var, Var> span_logits(Tape<T>& tape, Var h, Var w_start, Var w_end,
                                std::span<const std::uint8_t> padding) {
  for (const Var w : {w_start, w_end}) {
    if (tape.value(w).shape() != Shape{tape.value(h).cols(), 2}) {
      throw DimensionError("span head " + shape_str(tape.value(w).shape()) + " for width " +
                           std::to_string(tape.value(h).cols()) + ", expected d x 2");
    }
  }
  Var s = ops::linear(tape, h, w_start);
  Var e = ops::linear(tape, h, w_end);
  if (std::any_of(padding.begin(), padding.end(), [](std::uint8_t p) { return p != 0; })) {
    s = ops::mask_column(tape, s, padding, 1, static_cast<T>(ops::kMaskedLogit));
    e = ops::mask_column(tape, e, padding, 1, static_cast<T>(ops::kMaskedLogit));
  }
  return {s, e};
}

SpanLossParts span_loss(const Tensor<double>& p_start, const Tensor<double>& p_end, Span gold) {
  if (p_start.shape() != p_end.shape() || p_start.cols() != 2 || p_start.rank() != 2) {
    throw DimensionError("span_loss: probabilities " + shape_str(p_start.shape()) + " and " +
                         shape_str(p_end.shape()) + " must both be L x 2");
  }
  const std::size_t n = p_start.rows();
  if (gold.first >= n || gold.second >= n) {
    throw IndexError("span_loss: gold (" + std::to_string(gold.first) + ", " +
                     std::to_string(gold.second) + ") outside " + std::to_string(n) + " positions");
  }
  auto ce = [n](const Tensor<double>& p, std::size_t at) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s -= std::log(p(i, i == at ? 1 : 0));
    return s / static_cast<double>(n);
  };
  SpanLossParts out;
  out.start = ce(p_start, gold.first);
  out.end = ce(p_end, gold.second);
  out.total = 0.5 * (out.start + out.end);
  return out;
}

SpanPrediction decode_span(const Tensor<double>& p_start, const Tensor<double>& p_end,
                           std::size_t tgt_begin, std::size_t tgt_len) {
  const std::size_t n = p_start.rows();
  if (p_end.rows() != n || tgt_begin == 0 || tgt_begin + tgt_len > n) {
    throw DimensionError("decode_span: target range [" + std::to_string(tgt_begin) + ", " +
                         std::to_string(tgt_begin + tgt_len) + ") for " + std::to_string(n) +
                         " positions");
  }
  SpanPrediction pred;
  pred.p_start.resize(n);
  pred.p_end.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred.p_start[i] = p_start(i, 1);
    pred.p_end[i] = p_end(i, 1);
  }
  auto argmax = [&](const std::vector<double>& p) {
    std::size_t best = 0;
    for (std::size_t i = tgt_begin; i < tgt_begin + tgt_len; ++i) {
      if (p[i] > p[best]) best = i;
    }
    return best;
  };
  pred.start_index = argmax(pred.p_start);
  pred.end_index = argmax(pred.p_end);
  const std::size_t s = pred.start_index;
  const std::size_t e = pred.end_index;
  if (s == 0 && e == 0) return pred;
  if (s > 0 && s <= e) {
    pred.span = Span{s, e};
  } else {
    pred.inconsistent = true;
  }
  return pred;
}

template <typename T>
std::vector<std::string> Extractor<T>::head_param_names(const ExtractorConfig& cfg) {
  std::vector<std::string> names;
  if (cfg.mode == ExtractorMode::attn) names.assign(std::begin(kFusionNames), std::end(kFusionNames));
  if (cfg.tie_span_heads) {
    names.push_back("span.w");
  } else {
    names.push_back("span.w_start");
    names.push_back("span.w_end");
  }
  return names;
}

template <typename T>
void Extractor<T>::add_head_params(ParamStore<T>& store, const EncoderConfig& enc,
                                   const ExtractorConfig& cfg, std::mt19937_64& rng) {
  for (const auto& name : head_param_names(cfg)) {
    if (name.rfind("span.", 0) == 0) {
      store.add(name, normal_init<T>({enc.d, 2}, rng));
    } else if (name == "fusion.ln.gamma") {
      store.add(name, Tensor<T>::filled({enc.d}, T(1)));
    } else {
      const Shape shape = fusion_shape(name, enc);
      store.add(name, shape.size() == 2 ? normal_init<T>(shape, rng) : Tensor<T>(shape));
    }
  }
}

template <typename T>
Extractor<T>::Extractor(const EncoderConfig& enc, const ExtractorConfig& cfg, ParamStore<T>& store)
    : enc_cfg_(enc), cfg_(cfg), encoder_(enc, store) {
  if (cfg.drop_source && cfg.mode != ExtractorMode::concat) {
    throw PreconditionError("dropping the source term is only defined for the concat extractor");
  }
  if (cfg.tie_span_heads) {
    w_start_ = w_end_ = &bind_param(store, "span.w", {enc.d, 2});
  } else {
    w_start_ = &bind_param(store, "span.w_start", {enc.d, 2});
    w_end_ = &bind_param(store, "span.w_end", {enc.d, 2});
  }
  if (cfg.mode == ExtractorMode::attn) {
    for (const char* name : kFusionNames) fusion_.push_back(&bind_param(store, name, fusion_shape(name, enc)));
  }
}

template <typename T>
typename Extractor<T>::Output Extractor<T>::forward(Tape<T>& tape,
                                                    std::span<const ExtractorInput> batch,
                                                    const RunMode& mode,
                                                    AttentionTrace<T>* trace) const {
  if (batch.empty()) throw PreconditionError("empty extractor batch");
  Output out;
  std::vector<std::uint8_t> padding;
  for (const auto& ex : batch) padding.insert(padding.end(), ex.target.padding.begin(), ex.target.padding.end());

  Var h;
  if (cfg_.mode == ExtractorMode::concat) {
    std::vector<SegmentedInput> seqs;
    seqs.reserve(batch.size());
    for (const auto& ex : batch) seqs.push_back(ex.target);
    const auto packed = PackedBatch::pack(seqs);
    h = encoder_.forward(tape, packed, mode, trace);
    out.offsets = packed.offsets;
    out.lengths = packed.lengths;
  } else {
    // Sources and targets go through the one shared encoder in a single
    // packed pass, then split back apart.
    std::vector<SegmentedInput> seqs;
    seqs.reserve(2 * batch.size());
    for (const auto& ex : batch) {
      if (ex.source.size() == 0) throw PreconditionError("attn extractor input without source");
      seqs.push_back(ex.source);
    }
    for (const auto& ex : batch) seqs.push_back(ex.target);
    const auto packed = PackedBatch::pack(seqs);
    const Var all = encoder_.forward(tape, packed, mode, trace);
    std::vector<std::int32_t> src_rows, tgt_rows;
    std::vector<ops::AttentionGroup> groups;
    std::size_t src_off = 0, tgt_off = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t sl = packed.lengths[b];
      const std::size_t tl = packed.lengths[batch.size() + b];
      for (std::size_t i = 0; i < sl; ++i) src_rows.push_back(static_cast<std::int32_t>(packed.offsets[b] + i));
      for (std::size_t i = 0; i < tl; ++i) {
        tgt_rows.push_back(static_cast<std::int32_t>(packed.offsets[batch.size() + b] + i));
      }
      ops::AttentionGroup g;
      g.q_offset = tgt_off;
      g.q_len = tl;
      g.k_offset = src_off;
      g.k_len = sl;
      if (std::any_of(batch[b].source.padding.begin(), batch[b].source.padding.end(),
                      [](std::uint8_t p) { return p != 0; })) {
        g.key_mask = batch[b].source.padding;
      }
      groups.push_back(std::move(g));
      out.offsets.push_back(tgt_off);
      out.lengths.push_back(tl);
      src_off += sl;
      tgt_off += tl;
    }
    const Var h_src = ops::gather_rows(tape, all, src_rows, "encoder output");
    const Var h_tgt = ops::gather_rows(tape, all, tgt_rows, "encoder output");
    auto P = [&](std::size_t i) { return tape.param(*fusion_[i]); };
    const FusionParams<T> block{{P(0), P(1), P(2), P(3), P(4), P(5), P(6), P(7)},
                                P(8), P(9), P(10), P(11), P(12), P(13)};
    h = fuse_attn(tape, h_src, h_tgt, block, groups, enc_cfg_.heads);
  }
  const auto [s, e] = span_logits(tape, h, tape.param(*w_start_), tape.param(*w_end_), padding);
  out.start_logits = s;
  out.end_logits = e;
  return out;
}

template <typename T>
Var Extractor<T>::loss(Tape<T>& tape, const Output& out, std::span<const ExtractorInput> batch) const {
  const std::size_t rows = tape.value(out.start_logits).rows();
  std::vector<std::int32_t> y_start(rows, 0), y_end(rows, 0);
  std::vector<T> weights(rows, T(0));
  const T per_example = T(1) / static_cast<T>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    const std::size_t off = out.offsets[b];
    const std::size_t len = out.lengths[b];
    if (ex.gold.first >= len || ex.gold.second >= len) {
      throw IndexError("gold (" + std::to_string(ex.gold.first) + ", " +
                       std::to_string(ex.gold.second) + ") outside an input of " +
                       std::to_string(len) + " positions");
    }
    std::size_t live = 0;
    for (std::size_t i = 0; i < len; ++i) live += ex.target.padding[i] == 0;
    for (std::size_t i = 0; i < len; ++i) {
      if (ex.target.padding[i] == 0) weights[off + i] = per_example / static_cast<T>(live);
    }
    y_start[off + ex.gold.first] = 1;
    y_end[off + ex.gold.second] = 1;
  }
  const Var ls = ops::softmax_cross_entropy(tape, out.start_logits, y_start, std::span<const T>(weights));
  const Var le = ops::softmax_cross_entropy(tape, out.end_logits, y_end, std::span<const T>(weights));
  return ops::scale(tape, ops::add(tape, ls, le), T(0.5));
}

template <typename T>
std::vector<SpanPrediction> Extractor<T>::predict(std::span<const ExtractorInput> batch) const {
  Tape<T> tape(false);
  const auto out = forward(tape, batch, RunMode{});
  const auto ps = ops::softmax_rows(tape.value(out.start_logits));
  const auto pe = ops::softmax_rows(tape.value(out.end_logits));
  std::vector<SpanPrediction> preds;
  preds.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    preds.push_back(decode_span(rows_to_double(ps, out.offsets[b], out.lengths[b]),
                                rows_to_double(pe, out.offsets[b], out.lengths[b]),
                                batch[b].tgt_begin, batch[b].tgt_len));
  }
  return preds;
}

std::optional<std::string> extract(std::string_view src_term, std::string_view tgt_sentence,
                                   const Extractor<float>& model, const text::MergeTable& merges,
                                   const text::Vocab& vocab, std::string_view src_lang,
                                   std::string_view tgt_lang, std::size_t max_len) {
  const auto src_tokens = text::apply_bpe(src_term, merges);
  const auto tgt_tokens = text::apply_bpe(tgt_sentence, merges);
  if (src_tokens.empty() || tgt_tokens.empty()) {
    throw PreconditionError("extract needs a non-empty source term and target sentence");
  }
  const auto input = layout_ids(vocab.encode(src_tokens), vocab.encode(tgt_tokens),
                                vocab.lang_id(src_lang), vocab.lang_id(tgt_lang), model.config(),
                                max_len, std::nullopt);
  const auto pred = model.predict({&input, 1})[0];
  if (!pred.span) return std::nullopt;
  const std::size_t s = pred.span->first - input.tgt_begin;
  const std::size_t e = pred.span->second - input.tgt_begin;
  return text::detokenize(std::span<const std::string>(tgt_tokens.data() + s, e - s + 1));
}

std::vector<StepLog> train_extractor(ParamStore<float>& store, const EncoderConfig& enc,
                                     const ExtractorConfig& cfg,
                                     std::span<const ExtractorInput> train,
                                     const TrainOptions& options,
                                     const std::function<void(const StepLog&)>& on_step) {
  if (train.empty()) throw PreconditionError("empty training set");
  if (options.batch_size == 0) throw PreconditionError("batch_size must be positive");
  for (const auto& ex : train) {
    ex.target.validate(enc);
    if (cfg.mode == ExtractorMode::attn) ex.source.validate(enc);
  }
  const Extractor<float> model(enc, cfg, store);
  Adam<float> adam(options.adam);
  std::mt19937_64 rng(options.seed);
  std::mt19937_64 dropout_rng(options.seed ^ 0x9E3779B97F4A7C15ULL);
  const RunMode mode{true, &dropout_rng};

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<StepLog> log;
  log.reserve(options.steps);
  std::vector<ExtractorInput> batch;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(options.batch_size, train.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(train[order[cursor++]]);
    }
    Tape<float> tape;
    const auto out = model.forward(tape, batch, mode);
    const Var loss = model.loss(tape, out, batch);
    StepLog entry;
    entry.step = step;
    entry.kind = std::string(mode_name(cfg.mode));
    entry.loss = tape.value(loss)[0];
    tape.backward(loss);
    adam.step(store);
    entry.lr = adam.last_lr();
    log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return log;
}

template class Extractor<float>;
template class Extractor<double>;
template Var fuse_attn<float>(Tape<float>&, Var, Var, const FusionParams<float>&,
                              std::span<const ops::AttentionGroup>, std::size_t);
template Var fuse_attn<double>(Tape<double>&, Var, Var, const FusionParams<double>&,
                               std::span<const ops::AttentionGroup>, std::size_t);
template std::pair<Var, Var> span_logits<float>(Tape<float>&, Var, Var, Var, std::span<const std::uint8_t>);
template std::pair<Var, Var> span_logits<double>(Tape<double>&, Var, Var, Var, std::span<const std::uint8_t>);

}  // namespace btx::model
