#include "btx/model/pretrain.hpp"

#include <cmath>

#include "btx/core/errors.hpp"
#include "btx/text/vocab.hpp"

namespace btx::model {

using text::Vocab;

void MaskingPolicy::validate() const {
  if (!(select_prob >= 0.0 && select_prob <= 1.0)) {
    throw PreconditionError("masking: select_prob must be in [0, 1]");
  }
  if (mask_frac < 0 || random_frac < 0 || keep_frac < 0 ||
      std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-9) {
    throw PreconditionError("masking: mask/random/keep fractions must be non-negative and sum to 1");
  }
}

MaskedTokens mask_tokens(std::span<const std::int32_t> ids, const MaskingPolicy& policy,
                         std::size_t vocab_size, std::mt19937_64& rng) {
  policy.validate();
  MaskedTokens out;
  out.corrupted.assign(ids.begin(), ids.end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool can_randomize = vocab_size > static_cast<std::size_t>(Vocab::kNumSpecial);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (Vocab::is_special(ids[i])) continue;
    if (u(rng) >= policy.select_prob) continue;
    out.label_positions.push_back(i);
    out.label_ids.push_back(ids[i]);
    const double r = u(rng);
    if (r < policy.mask_frac) {
      out.corrupted[i] = Vocab::kMask;
    } else if (r < policy.mask_frac + policy.random_frac && can_randomize) {
      out.corrupted[i] = std::uniform_int_distribution<std::int32_t>(
          Vocab::kNumSpecial, static_cast<std::int32_t>(vocab_size) - 1)(rng);
    }
  }
  return out;
}

SegmentedInput make_mono_input(std::span<const std::int32_t> ids, std::int32_t lang,
                               std::size_t max_len) {
  if (ids.empty()) throw PreconditionError("empty sequence");
  if (ids.size() + 2 > max_len) {
    throw PreconditionError("sequence of " + std::to_string(ids.size()) +
                            " tokens exceeds max_len " + std::to_string(max_len) +
                            " with separators");
  }
  SegmentedInput in;
  in.token_ids.push_back(Vocab::kSep);
  in.token_ids.insert(in.token_ids.end(), ids.begin(), ids.end());
  in.token_ids.push_back(Vocab::kSep);
  for (std::size_t i = 0; i < in.token_ids.size(); ++i) {
    in.position_ids.push_back(static_cast<std::int32_t>(i));
  }
  in.language_ids.assign(in.token_ids.size(), lang);
  in.padding.assign(in.token_ids.size(), 0);
  in.segment_starts = {0};
  return in;
}

SegmentedInput make_tlm_pair(std::span<const std::int32_t> src, std::span<const std::int32_t> tgt,
                             std::int32_t src_lang, std::int32_t tgt_lang, std::size_t max_len) {
  if (src.empty() || tgt.empty()) {
    throw PreconditionError("TLM pair needs non-empty source and target, got " +
                            std::to_string(src.size()) + " and " + std::to_string(tgt.size()));
  }
  const std::size_t total = src.size() + tgt.size() + 3;
  if (total > max_len) {
    throw PreconditionError("TLM pair of " + std::to_string(src.size()) + " + " +
                            std::to_string(tgt.size()) + " tokens (+3 separators = " +
                            std::to_string(total) + ") exceeds max_len " + std::to_string(max_len));
  }
  SegmentedInput in = make_mono_input(src, src_lang, total);
  in.token_ids.pop_back();
  in.position_ids.pop_back();
  in.language_ids.pop_back();
  in.padding.pop_back();
  const auto second = make_mono_input(tgt, tgt_lang, total);
  in.segment_starts.push_back(in.token_ids.size());
  in.token_ids.insert(in.token_ids.end(), second.token_ids.begin(), second.token_ids.end());
  in.position_ids.insert(in.position_ids.end(), second.position_ids.begin(), second.position_ids.end());
  in.language_ids.insert(in.language_ids.end(), second.language_ids.begin(), second.language_ids.end());
  in.padding.insert(in.padding.end(), second.padding.begin(), second.padding.end());
  return in;
}

MlmExample corrupt(const SegmentedInput& input, const MaskingPolicy& policy,
                   std::size_t vocab_size, std::mt19937_64& rng) {
  std::vector<std::int32_t> ids = input.token_ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (input.padding[i] != 0) ids[i] = Vocab::kPad;
  }
  auto m = mask_tokens(ids, policy, vocab_size, rng);
  MlmExample ex;
  ex.input = input;
  ex.input.token_ids = std::move(m.corrupted);
  ex.label_positions = std::move(m.label_positions);
  ex.label_ids = std::move(m.label_ids);
  return ex;
}

template <typename T>
void MlmHead<T>::add_params(ParamStore<T>& store, const EncoderConfig& cfg) {
  store.add("mlm.out_bias", Tensor<T>({cfg.vocab_size}));
}

template <typename T>
MlmHead<T>::MlmHead(const EncoderConfig& cfg, ParamStore<T>& store)
    : bias_(&bind_param(store, "mlm.out_bias", {cfg.vocab_size})) {}

template <typename T>
std::optional<Var> MlmHead<T>::loss(Tape<T>& tape, const Encoder<T>& encoder,
                                    std::span<const MlmExample> batch, const RunMode& mode) const {
  std::vector<SegmentedInput> inputs;
  inputs.reserve(batch.size());
  for (const auto& ex : batch) inputs.push_back(ex.input);
  const auto packed = PackedBatch::pack(inputs);
  std::vector<std::int32_t> rows;
  std::vector<std::int32_t> targets;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t k = 0; k < batch[b].label_positions.size(); ++k) {
      rows.push_back(static_cast<std::int32_t>(packed.offsets[b] + batch[b].label_positions[k]));
      targets.push_back(batch[b].label_ids[k]);
    }
  }
  if (rows.empty()) return std::nullopt;
  const Var h = encoder.forward(tape, packed, mode);
  const Var sel = ops::gather_rows(tape, h, rows, "encoder output");
  const Var logits =
      ops::linear_nt(tape, sel, tape.param(encoder.token_embedding()), tape.param(*bias_));
  return ops::softmax_cross_entropy(tape, logits, targets);
}

template class MlmHead<float>;
template class MlmHead<double>;

std::vector<StepLog> pretrain(ParamStore<float>& store, const EncoderConfig& cfg,
                              const PretrainCorpus& corpus, const PretrainOptions& options,
                              const std::function<void(const StepLog&)>& on_step) {
  options.masking.validate();
  if (options.objective != "mlm" && options.objective != "tlm") {
    throw PreconditionError("unknown pre-training objective: " + options.objective);
  }
  const bool tlm = options.objective == "tlm";
  if (corpus.mono.empty() && (!tlm || corpus.parallel.empty())) {
    throw PreconditionError("pre-training corpus is empty");
  }
  if (tlm && corpus.parallel.empty()) {
    throw PreconditionError("TLM pre-training needs parallel pairs");
  }
  if (options.batch_size == 0) throw PreconditionError("batch_size must be positive");
  for (const auto& in : corpus.mono) in.validate(cfg);
  for (const auto& in : corpus.parallel) in.validate(cfg);

  if (!store.contains("mlm.out_bias")) MlmHead<float>::add_params(store, cfg);
  const Encoder<float> encoder(cfg, store);
  const MlmHead<float> head(cfg, store);
  Adam<float> adam(options.adam);
  std::mt19937_64 rng(options.seed);
  std::mt19937_64 dropout_rng(options.seed ^ 0x9E3779B97F4A7C15ULL);
  const RunMode mode{true, &dropout_rng};

  std::vector<StepLog> log;
  log.reserve(options.steps);
  std::vector<MlmExample> batch;
  for (std::size_t step = 1; step <= options.steps; ++step) {
    const bool parallel = tlm && (corpus.mono.empty() || step % 2 == 1);
    const auto& stream = parallel ? corpus.parallel : corpus.mono;
    std::uniform_int_distribution<std::size_t> pick(0, stream.size() - 1);
    batch.clear();
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      batch.push_back(corrupt(stream[pick(rng)], options.masking, cfg.vocab_size, rng));
    }
    StepLog entry;
    entry.step = step;
    entry.kind = parallel ? "tlm" : "mlm";
    Tape<float> tape;
    const auto loss = head.loss(tape, encoder, batch, mode);
    if (!loss) {
      entry.skipped = true;
    } else {
      entry.loss = tape.value(*loss)[0];
      tape.backward(*loss);
      adam.step(store);
      entry.lr = adam.last_lr();
    }
    log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return log;
}

}  // namespace btx::model
