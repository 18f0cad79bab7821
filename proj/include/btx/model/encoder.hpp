#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "btx/core/ops.hpp"
#include "btx/core/param.hpp"
#include "btx/core/tape.hpp"

namespace btx::model {

struct EncoderConfig {
  std::size_t d = 128;
  std::size_t d_ff = 512;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_positions = 128;
  std::size_t vocab_size = 0;
  std::size_t n_langs = 3;
  double dropout = 0.1;

  // Throws PreconditionError naming the offending field. layers may be 0.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// One model-ready sequence. padding[i] != 0 marks a padded position.
struct SegmentedInput {
  std::vector<std::int32_t> token_ids;
  std::vector<std::int32_t> position_ids;
  std::vector<std::int32_t> language_ids;
  std::vector<std::uint8_t> padding;
  // Start index of every segment after the leading separator.
  std::vector<std::size_t> segment_starts;

  std::size_t size() const { return token_ids.size(); }
  // Equal lengths, positions below max_positions, known languages.
  void validate(const EncoderConfig& cfg) const;
  // Pads with [PAD] up to `length` positions.
  void pad_to(std::size_t length, std::int32_t pad_id);
};

// Several sequences stacked row-wise; each attends only within itself.
struct PackedBatch {
  std::vector<std::int32_t> token_ids;
  std::vector<std::int32_t> position_ids;
  std::vector<std::int32_t> language_ids;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
  std::vector<ops::AttentionGroup> self_groups;

  static PackedBatch pack(std::span<const SegmentedInput> inputs);
  static PackedBatch pack(const SegmentedInput& input) { return pack({&input, 1}); }
  std::size_t rows() const { return token_ids.size(); }
  std::size_t sequences() const { return offsets.size(); }
};

struct RunMode {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

// Self-attention weights of each layer, per sequence, [heads x L x L].
template <typename T>
using AttentionTrace = std::vector<ops::AttentionWeights<T>>;

// Normal(0, std) for tables and projections, zero biases, unit gains.
template <typename T>
Tensor<T> normal_init(Shape shape, std::mt19937_64& rng, double stddev = 0.02);

// Token + position + language embeddings followed by a stack of post-norm
// blocks, {x = LN(x + Attn(x)); x = LN(x + FFN(x))}. Parameters live in a
// ParamStore under "encoder."; the object only binds to them.
template <typename T>
class Encoder {
 public:
  static void add_params(ParamStore<T>& store, const EncoderConfig& cfg, std::mt19937_64& rng);
  static std::vector<std::string> param_names(const EncoderConfig& cfg);

  // Throws if a parameter is missing or mis-shaped.
  Encoder(const EncoderConfig& cfg, ParamStore<T>& store);

  const EncoderConfig& config() const { return cfg_; }

  Var embed(Tape<T>& tape, const PackedBatch& batch, const RunMode& mode) const;
  // Throws NumericError naming the layer if activations become non-finite.
  Var encode(Tape<T>& tape, Var x, const PackedBatch& batch, const RunMode& mode,
             AttentionTrace<T>* trace = nullptr) const;
  Var forward(Tape<T>& tape, const PackedBatch& batch, const RunMode& mode,
              AttentionTrace<T>* trace = nullptr) const {
    return encode(tape, embed(tape, batch, mode), batch, mode, trace);
  }

  Parameter<T>& token_embedding() const { return *tok_; }

 private:
  struct Layer {
    Parameter<T>* wq; Parameter<T>* bq; Parameter<T>* wk; Parameter<T>* bk;
    Parameter<T>* wv; Parameter<T>* bv; Parameter<T>* wo; Parameter<T>* bo;
    Parameter<T>* ln1_g; Parameter<T>* ln1_b;
    Parameter<T>* w1; Parameter<T>* b1; Parameter<T>* w2; Parameter<T>* b2;
    Parameter<T>* ln2_g; Parameter<T>* ln2_b;
  };

  Var maybe_dropout(Tape<T>& tape, Var x, const RunMode& mode) const;

  EncoderConfig cfg_;
  Parameter<T>* tok_;
  Parameter<T>* pos_;
  Parameter<T>* lang_;
  std::vector<Layer> layers_;
};

// Binds a parameter and checks its shape.
template <typename T>
Parameter<T>& bind_param(ParamStore<T>& store, const std::string& name, const Shape& shape);

}  // namespace btx::model
