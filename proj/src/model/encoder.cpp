#include "btx/model/encoder.hpp"

#include "btx/core/errors.hpp"

namespace btx::model {

namespace {

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw PreconditionError(std::string("encoder config: ") + name + " must be positive");
}

std::string layer_prefix(std::size_t i) { return "encoder.layer" + std::to_string(i) + "."; }

}  // namespace

void EncoderConfig::validate() const {
  require_positive(d, "d");
  require_positive(d_ff, "d_ff");
  require_positive(heads, "heads");
  require_positive(max_positions, "max_positions");
  require_positive(vocab_size, "vocab_size");
  require_positive(n_langs, "n_langs");
  if (d % heads != 0) {
    throw PreconditionError("encoder config: d=" + std::to_string(d) +
                            " is not divisible by heads=" + std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw PreconditionError("encoder config: dropout must be in [0, 1)");
  }
}

void SegmentedInput::validate(const EncoderConfig& cfg) const {
  const std::size_t n = token_ids.size();
  if (n == 0) throw PreconditionError("empty input sequence");
  if (position_ids.size() != n || language_ids.size() != n || padding.size() != n) {
    throw DimensionError("input id sequences differ in length: tokens " + std::to_string(n) +
                         ", positions " + std::to_string(position_ids.size()) + ", languages " +
                         std::to_string(language_ids.size()) + ", padding " +
                         std::to_string(padding.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (position_ids[i] < 0 || static_cast<std::size_t>(position_ids[i]) >= cfg.max_positions) {
      throw IndexError("position embedding: id " + std::to_string(position_ids[i]) +
                       " at index " + std::to_string(i) + " outside [0, " +
                       std::to_string(cfg.max_positions) + ")");
    }
    if (language_ids[i] < 0 || static_cast<std::size_t>(language_ids[i]) >= cfg.n_langs) {
      throw IndexError("language embedding: id " + std::to_string(language_ids[i]) +
                       " at index " + std::to_string(i) + " outside [0, " +
                       std::to_string(cfg.n_langs) + ")");
    }
    if (token_ids[i] < 0 || static_cast<std::size_t>(token_ids[i]) >= cfg.vocab_size) {
      throw IndexError("token embedding: id " + std::to_string(token_ids[i]) + " at index " +
                       std::to_string(i) + " outside [0, " + std::to_string(cfg.vocab_size) + ")");
    }
  }
  for (const auto s : segment_starts) {
    if (s >= n) throw IndexError("segment start " + std::to_string(s) + " beyond sequence");
  }
}

void SegmentedInput::pad_to(std::size_t length, std::int32_t pad_id) {
  const std::int32_t lang = language_ids.empty() ? 0 : language_ids.back();
  while (token_ids.size() < length) {
    token_ids.push_back(pad_id);
    position_ids.push_back(0);
    language_ids.push_back(lang);
    padding.push_back(1);
  }
}

PackedBatch PackedBatch::pack(std::span<const SegmentedInput> inputs) {
  PackedBatch b;
  for (const auto& in : inputs) {
    if (in.size() == 0) throw PreconditionError("cannot pack an empty sequence");
    const std::size_t off = b.token_ids.size();
    b.offsets.push_back(off);
    b.lengths.push_back(in.size());
    b.token_ids.insert(b.token_ids.end(), in.token_ids.begin(), in.token_ids.end());
    b.position_ids.insert(b.position_ids.end(), in.position_ids.begin(), in.position_ids.end());
    b.language_ids.insert(b.language_ids.end(), in.language_ids.begin(), in.language_ids.end());
    ops::AttentionGroup g;
    g.q_offset = g.k_offset = off;
    g.q_len = g.k_len = in.size();
    bool any_pad = false;
    for (const auto p : in.padding) any_pad = any_pad || p != 0;
    if (any_pad) g.key_mask = in.padding;
    b.self_groups.push_back(std::move(g));
  }
  return b;
}

template <typename T>
Tensor<T> normal_init(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(n(rng));
  return t;
}

template <typename T>
Parameter<T>& bind_param(ParamStore<T>& store, const std::string& name, const Shape& shape) {
  if (!store.contains(name)) throw IndexError("missing parameter " + name);
  auto& p = store.get(name);
  if (p.value.shape() != shape) {
    throw DimensionError("parameter " + name + " has shape " + shape_str(p.value.shape()) +
                         ", expected " + shape_str(shape));
  }
  return p;
}

template <typename T>
std::vector<std::string> Encoder<T>::param_names(const EncoderConfig& cfg) {
  std::vector<std::string> names = {"encoder.embed.token", "encoder.embed.position",
                                    "encoder.embed.language"};
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    for (const char* s : {"attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
                          "attn.wo", "attn.bo", "ln1.gamma", "ln1.beta", "ffn.w1", "ffn.b1",
                          "ffn.w2", "ffn.b2", "ln2.gamma", "ln2.beta"}) {
      names.push_back(layer_prefix(i) + s);
    }
  }
  return names;
}

template <typename T>
void Encoder<T>::add_params(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t d = cfg.d;
  store.add("encoder.embed.token", normal_init<T>({cfg.vocab_size, d}, rng));
  store.add("encoder.embed.position", normal_init<T>({cfg.max_positions, d}, rng));
  store.add("encoder.embed.language", normal_init<T>({cfg.n_langs, d}, rng));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const auto p = layer_prefix(i);
    for (const char* m : {"q", "k", "v", "o"}) {
      store.add(p + "attn.w" + m, normal_init<T>({d, d}, rng));
      store.add(p + "attn.b" + m, Tensor<T>({d}));
    }
    store.add(p + "ln1.gamma", Tensor<T>::filled({d}, T(1)));
    store.add(p + "ln1.beta", Tensor<T>({d}));
    store.add(p + "ffn.w1", normal_init<T>({d, cfg.d_ff}, rng));
    store.add(p + "ffn.b1", Tensor<T>({cfg.d_ff}));
    store.add(p + "ffn.w2", normal_init<T>({cfg.d_ff, d}, rng));
    store.add(p + "ffn.b2", Tensor<T>({d}));
    store.add(p + "ln2.gamma", Tensor<T>::filled({d}, T(1)));
    store.add(p + "ln2.beta", Tensor<T>({d}));
  }
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, ParamStore<T>& store) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg.d;
  tok_ = &bind_param(store, "encoder.embed.token", {cfg.vocab_size, d});
  pos_ = &bind_param(store, "encoder.embed.position", {cfg.max_positions, d});
  lang_ = &bind_param(store, "encoder.embed.language", {cfg.n_langs, d});
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const auto p = layer_prefix(i);
    Layer l{};
    l.wq = &bind_param(store, p + "attn.wq", {d, d});
    l.bq = &bind_param(store, p + "attn.bq", {d});
    l.wk = &bind_param(store, p + "attn.wk", {d, d});
    l.bk = &bind_param(store, p + "attn.bk", {d});
    l.wv = &bind_param(store, p + "attn.wv", {d, d});
    l.bv = &bind_param(store, p + "attn.bv", {d});
    l.wo = &bind_param(store, p + "attn.wo", {d, d});
    l.bo = &bind_param(store, p + "attn.bo", {d});
    l.ln1_g = &bind_param(store, p + "ln1.gamma", {d});
    l.ln1_b = &bind_param(store, p + "ln1.beta", {d});
    l.w1 = &bind_param(store, p + "ffn.w1", {d, cfg.d_ff});
    l.b1 = &bind_param(store, p + "ffn.b1", {cfg.d_ff});
    l.w2 = &bind_param(store, p + "ffn.w2", {cfg.d_ff, d});
    l.b2 = &bind_param(store, p + "ffn.b2", {d});
    l.ln2_g = &bind_param(store, p + "ln2.gamma", {d});
    l.ln2_b = &bind_param(store, p + "ln2.beta", {d});
    layers_.push_back(l);
  }
}

template <typename T>
Var Encoder<T>::maybe_dropout(Tape<T>& tape, Var x, const RunMode& mode) const {
  if (!mode.train || cfg_.dropout == 0.0) return x;
  if (mode.rng == nullptr) throw PreconditionError("training with dropout needs an rng");
  return ops::dropout(tape, x, cfg_.dropout, *mode.rng);
}

template <typename T>
Var Encoder<T>::embed(Tape<T>& tape, const PackedBatch& batch, const RunMode& mode) const {
  const Var tok = ops::gather_rows(tape, tape.param(*tok_), batch.token_ids, "token embedding");
  const Var pos =
      ops::gather_rows(tape, tape.param(*pos_), batch.position_ids, "position embedding");
  const Var lang =
      ops::gather_rows(tape, tape.param(*lang_), batch.language_ids, "language embedding");
  return maybe_dropout(tape, ops::add(tape, ops::add(tape, tok, pos), lang), mode);
}

template <typename T>
Var Encoder<T>::encode(Tape<T>& tape, Var x, const PackedBatch& batch, const RunMode& mode,
                       AttentionTrace<T>* trace) const {
  if (tape.value(x).cols() != cfg_.d || tape.value(x).rows() != batch.rows()) {
    throw DimensionError("encode: input " + shape_str(tape.value(x).shape()) + " for " +
                         std::to_string(batch.rows()) + " rows of width " + std::to_string(cfg_.d));
  }
  if (trace != nullptr) trace->clear();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    const ops::AttentionParams<T> ap{tape.param(*l.wq), tape.param(*l.bq), tape.param(*l.wk),
                                     tape.param(*l.bk), tape.param(*l.wv), tape.param(*l.bv),
                                     tape.param(*l.wo), tape.param(*l.bo)};
    ops::AttentionWeights<T> weights;
    Var a = ops::multi_head_attention(tape, x, x, x, ap, batch.self_groups, cfg_.heads,
                                      trace != nullptr ? &weights : nullptr);
    if (trace != nullptr) trace->push_back(std::move(weights));
    a = maybe_dropout(tape, a, mode);
    x = ops::layer_norm(tape, ops::add(tape, x, a), tape.param(*l.ln1_g), tape.param(*l.ln1_b));
    Var f = ops::ffn(tape, x, tape.param(*l.w1), tape.param(*l.b1), tape.param(*l.w2),
                     tape.param(*l.b2));
    f = maybe_dropout(tape, f, mode);
    x = ops::layer_norm(tape, ops::add(tape, x, f), tape.param(*l.ln2_g), tape.param(*l.ln2_b));
    if (!tape.value(x).all_finite()) {
      throw NumericError("non-finite activations after encoder layer " + std::to_string(i));
    }
  }
  return x;
}

template class Encoder<float>;
template class Encoder<double>;
template Tensor<float> normal_init<float>(Shape, std::mt19937_64&, double);
template Tensor<double> normal_init<double>(Shape, std::mt19937_64&, double);
template Parameter<float>& bind_param<float>(ParamStore<float>&, const std::string&, const Shape&);
template Parameter<double>& bind_param<double>(ParamStore<double>&, const std::string&, const Shape&);

}  // namespace btx::model
