#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "btx/core/adam.hpp"
#include "btx/data/corpus.hpp"
#include "btx/model/encoder.hpp"
#include "btx/model/pretrain.hpp"
#include "btx/text/bpe.hpp"
#include "btx/text/vocab.hpp"

namespace btx::model {

enum class ExtractorMode { attn, concat };

std::string_view mode_name(ExtractorMode mode);
// Throws PreconditionError on anything but "attn" or "concat".
ExtractorMode parse_mode(std::string_view name);

struct ExtractorConfig {
  ExtractorMode mode = ExtractorMode::concat;
  // One span head shared by start and end.
  bool tie_span_heads = false;
  // Concat only: [/s] t_1..t_n [/s] with no source segment.
  bool drop_source = false;
  bool operator==(const ExtractorConfig&) const = default;
};

using data::Span;

// One example laid out for a given architecture. In Concat mode `target`
// holds the full joint sequence and `source` is empty; in Attn mode the two
// sequences are encoded separately. Target term positions [tgt_begin,
// tgt_begin + tgt_len) are model coordinates inside `target`.
struct ExtractorInput {
  SegmentedInput source;
  SegmentedInput target;
  std::size_t tgt_begin = 0;
  std::size_t tgt_len = 0;
  // (0, 0) for negatives.
  Span gold{0, 0};
};

struct ConcatLayout {
  SegmentedInput input;
  std::size_t tgt_offset = 0;
};

// [/s] s_1..s_m [/s] t_1..t_n [/s] (length m+n+3, target offset m+2). With
// drop_source: [/s] t_1..t_n [/s] (length n+2, target offset 1).
ConcatLayout build_concat_input(std::span<const std::int32_t> term,
                                std::span<const std::int32_t> sentence, std::int32_t src_lang,
                                std::int32_t tgt_lang, bool drop_source, std::size_t max_len);

// Builds the layout for `cfg` and shifts the sentence-local gold span into
// model coordinates.
ExtractorInput make_extractor_input(const data::LabeledExample& ex, const text::Vocab& vocab,
                                    const ExtractorConfig& cfg, std::size_t max_len);

template <typename T>
struct FusionParams {
  ops::AttentionParams<T> attn;
  Var ln_gamma, ln_beta;
  Var w1, b1, w2, b2;
};

// F = MultiHead(Q=H_tgt, K=H_src, V=H_src); H = FFN(LayerNorm(H_tgt + F)).
// `groups` pair each target sequence (query rows) with its source (key rows).
template <typename T>
Var fuse_attn(Tape<T>& tape, Var h_src, Var h_tgt, const FusionParams<T>& block,
              std::span<const ops::AttentionGroup> groups, std::size_t heads);

// Per-position 2-class logits H W_start and H W_end. Class-1 logits at
// padded rows are pushed to the masked value.
template <typename T>
std::pair<Var, Var> span_logits(Tape<T>& tape, Var h, Var w_start, Var w_end,
                                std::span<const std::uint8_t> padding = {});

// Value-level loss on probability rows, L = (L_start + L_end) / 2 with
// L_x = mean_i -log p_x[i, y_i] and y one-hot at the gold index.
struct SpanLossParts {
  double start = 0.0;
  double end = 0.0;
  double total = 0.0;
};
SpanLossParts span_loss(const Tensor<double>& p_start, const Tensor<double>& p_end, Span gold);

struct SpanPrediction {
  std::size_t start_index = 0;
  std::size_t end_index = 0;
  std::vector<double> p_start;
  std::vector<double> p_end;
  std::optional<Span> span;
  bool inconsistent = false;
};

// Argmax of class-1 probability over {0} and the target positions
// [tgt_begin, tgt_begin + tgt_len), ties to the smaller index.
SpanPrediction decode_span(const Tensor<double>& p_start, const Tensor<double>& p_end,
                           std::size_t tgt_begin, std::size_t tgt_len);

// Shared encoder, optional fusion block and span heads over a ParamStore.
template <typename T>
class Extractor {
 public:
  // Adds fusion (Attn) and span-head parameters; the encoder parameters
  // must already be present.
  static void add_head_params(ParamStore<T>& store, const EncoderConfig& enc,
                              const ExtractorConfig& cfg, std::mt19937_64& rng);
  static std::vector<std::string> head_param_names(const ExtractorConfig& cfg);

  Extractor(const EncoderConfig& enc, const ExtractorConfig& cfg, ParamStore<T>& store);

  struct Output {
    Var start_logits;
    Var end_logits;
    // Rows of example b in the logits: [offsets[b], offsets[b] + lengths[b]).
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> lengths;
  };

  Output forward(Tape<T>& tape, std::span<const ExtractorInput> batch, const RunMode& mode,
                 AttentionTrace<T>* trace = nullptr) const;
  // Mean over examples of each example's span loss.
  Var loss(Tape<T>& tape, const Output& out, std::span<const ExtractorInput> batch) const;

  // Grad-free forward and decode. Safe to call concurrently.
  std::vector<SpanPrediction> predict(std::span<const ExtractorInput> batch) const;

  const Encoder<T>& encoder() const { return encoder_; }
  const ExtractorConfig& config() const { return cfg_; }

 private:
  EncoderConfig enc_cfg_;
  ExtractorConfig cfg_;
  Encoder<T> encoder_;
  Parameter<T>* w_start_;
  Parameter<T>* w_end_;
  std::vector<Parameter<T>*> fusion_;
};

// Tokenizes both texts, runs the model and detokenizes the decoded span;
// nullopt for the "no terminology" verdict.
std::optional<std::string> extract(std::string_view src_term, std::string_view tgt_sentence,
                                   const Extractor<float>& model, const text::MergeTable& merges,
                                   const text::Vocab& vocab, std::string_view src_lang,
                                   std::string_view tgt_lang, std::size_t max_len);

struct TrainOptions {
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 7;
};

// Epoch-shuffled minibatch training of all parameters in `store`.
std::vector<StepLog> train_extractor(ParamStore<float>& store, const EncoderConfig& enc,
                                     const ExtractorConfig& cfg,
                                     std::span<const ExtractorInput> train,
                                     const TrainOptions& options,
                                     const std::function<void(const StepLog&)>& on_step = {});

}  // namespace btx::model
