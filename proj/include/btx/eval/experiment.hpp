#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "btx/data/corpus.hpp"
#include "btx/data/synthetic.hpp"
#include "btx/eval/metrics.hpp"
#include "btx/io/run_config.hpp"
#include "btx/model/extractor.hpp"
#include "btx/model/pretrain.hpp"
#include "btx/text/bpe.hpp"
#include "btx/text/vocab.hpp"

namespace btx::eval {

// Everything a run needs after data preparation.
struct ExperimentData {
  std::vector<data::TermPair> pairs;
  std::vector<std::string> src_titles;
  std::vector<std::string> tgt_titles;
  text::MergeTable merges;
  text::Vocab vocab;
  data::Dataset dataset;
  std::string src_lang = "zh";
  std::string tgt_lang = "en";
};

// Vocabulary over the BPE-segmented titles and both sides of every pair.
text::Vocab build_vocab_for(std::span<const std::string> src_titles, std::span<const std::string> tgt_titles,
                            std::span<const data::TermPair> pairs, const text::MergeTable& merges,
                            std::size_t min_count, const std::vector<std::string>& languages);

// Generates the world, learns BPE over both title sets, builds labelled
// examples and truncates train/test to data.max_train / data.max_test
// (0 keeps everything).
ExperimentData prepare_synthetic(const io::RunConfig& config);

// Monolingual stream: every title, tagged with its language. Parallel
// stream: the term pairs plus the positive (term, sentence) training pairs.
// Items that do not fit max_len are left out.
model::PretrainCorpus pretrain_corpus(std::span<const std::string> src_titles,
                                      std::span<const std::string> tgt_titles,
                                      std::span<const data::TermPair> pairs,
                                      std::span<const data::LabeledExample> train,
                                      const text::MergeTable& merges, const text::Vocab& vocab,
                                      const std::string& src_lang, const std::string& tgt_lang,
                                      std::size_t max_len);

// Fresh extractor parameters: encoder and heads drawn from rng(seed), then
// the encoder overwritten by `init` when given.
ParamStore<float> init_extractor_params(const model::EncoderConfig& enc, const model::ExtractorConfig& cfg,
                                        std::uint64_t seed, const ParamStore<float>* init = nullptr,
                                        const model::EncoderConfig* init_cfg = nullptr);

struct TrendCell {
  std::string init = "rand";  // rand | mlm | tlm
  model::ExtractorMode mode = model::ExtractorMode::concat;
  bool with_source = true;
  std::size_t train_size = 0;  // 0 = the whole training split
  std::string name() const;
  bool operator==(const TrendCell&) const = default;
};

// Cross product of the lists; Attn cells without the source are skipped.
std::vector<TrendCell> make_grid(const std::vector<std::string>& inits,
                                 const std::vector<model::ExtractorMode>& modes,
                                 const std::vector<bool>& sources, const std::vector<std::size_t>& sizes);

struct TrendOptions {
  model::EncoderConfig encoder;  // vocab_size and n_langs are filled in
  model::PretrainOptions pretrain;
  model::TrainOptions train;
  std::size_t max_len = 64;
  std::vector<TrendCell> grid;
  std::size_t jobs = 1;
  std::function<void(const std::string&)> progress;
};

struct TrendRun {
  TrendCell cell;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  EvalReport report;
  double seconds = 0.0;
};

struct TrendSummary {
  TrendCell cell;
  std::vector<double> precisions;
  std::vector<double> negative_accuracies;
  std::size_t failures = 0;
  double median_precision = 0.0;
  double median_negative = 0.0;
  bool ok() const { return !precisions.empty(); }
};

// lhs ordered against rhs: holds when median(lhs) >= median(rhs), or
// strictly greater when `strict`.
struct TrendContrast {
  std::string name;
  std::string lhs;
  std::string rhs;
  double lhs_median = 0.0;
  double rhs_median = 0.0;
  double difference = 0.0;
  bool strict = false;
  bool holds = false;
};

struct TrendReport {
  std::vector<TrendRun> runs;
  std::vector<TrendSummary> summaries;
  std::vector<TrendContrast> contrasts;
  const TrendSummary* find(const TrendCell& cell) const;
};

double median(std::vector<double> values);

// For each seed: pre-trains MLM (and TLM from the MLM weights) when some
// cell needs it, fine-tunes every grid cell and evaluates it on the test
// split. A failing member is recorded and the suite moves on.
TrendReport run_trend_suite(const ExperimentData& data, const TrendOptions& options,
                            std::span<const std::uint64_t> seeds);

// Options and grid from a RunConfig (trend.* keys).
TrendOptions trend_options(const io::RunConfig& config);

std::string format_trend_report(const TrendReport& report);

}  // namespace btx::eval
