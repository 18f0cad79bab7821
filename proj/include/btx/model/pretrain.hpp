#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "btx/core/adam.hpp"
#include "btx/model/encoder.hpp"

namespace btx::model {

struct MaskingPolicy {
  double select_prob = 0.15;
  double mask_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;

  void validate() const;
};

struct MaskedTokens {
  std::vector<std::int32_t> corrupted;
  std::vector<std::size_t> label_positions;
  std::vector<std::int32_t> label_ids;
};

// Every non-special position is selected independently with select_prob and
// then replaced by [MASK], replaced by a uniform non-special token, or kept.
// Labels always hold the original ids.
MaskedTokens mask_tokens(std::span<const std::int32_t> ids, const MaskingPolicy& policy,
                         std::size_t vocab_size, std::mt19937_64& rng);

// [/s] t_1..t_n [/s], positions 0..n+1, one language.
SegmentedInput make_mono_input(std::span<const std::int32_t> ids, std::int32_t lang,
                               std::size_t max_len);

// [/s] src [/s] tgt [/s]. Positions restart at the second separator, which
// begins the target segment; language ids follow the segment.
SegmentedInput make_tlm_pair(std::span<const std::int32_t> src, std::span<const std::int32_t> tgt,
                             std::int32_t src_lang, std::int32_t tgt_lang, std::size_t max_len);

struct MlmExample {
  SegmentedInput input;
  std::vector<std::size_t> label_positions;
  std::vector<std::int32_t> label_ids;
};

MlmExample corrupt(const SegmentedInput& input, const MaskingPolicy& policy,
                   std::size_t vocab_size, std::mt19937_64& rng);

// Output projection tied to the token embedding plus a vocabulary bias.
template <typename T>
class MlmHead {
 public:
  static void add_params(ParamStore<T>& store, const EncoderConfig& cfg);
  MlmHead(const EncoderConfig& cfg, ParamStore<T>& store);

  // Mean cross-entropy over all labelled positions of the batch; nullopt
  // when the batch has no labels.
  std::optional<Var> loss(Tape<T>& tape, const Encoder<T>& encoder,
                          std::span<const MlmExample> batch, const RunMode& mode) const;

 private:
  Parameter<T>* bias_;
};

struct PretrainOptions {
  // "mlm": monolingual batches only. "tlm": alternates monolingual and
  // parallel batches, starting with a parallel one.
  std::string objective = "mlm";
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  AdamConfig adam;
  MaskingPolicy masking;
  std::uint64_t seed = 7;
};

struct PretrainCorpus {
  std::vector<SegmentedInput> mono;
  std::vector<SegmentedInput> parallel;
};

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool skipped = false;
  std::string kind;
};

// Trains encoder + MLM head parameters in `store` (adding the head if it is
// missing). Batches are sampled uniformly from each stream, so languages mix
// in proportion to corpus sizes.
std::vector<StepLog> pretrain(ParamStore<float>& store, const EncoderConfig& cfg,
                              const PretrainCorpus& corpus, const PretrainOptions& options,
                              const std::function<void(const StepLog&)>& on_step = {});

}  // namespace btx::model
