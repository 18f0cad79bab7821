#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "btx/text/bpe.hpp"

namespace btx::data {

struct TermPair {
  std::string src_term;
  std::string tgt_term;
  std::string category;
  bool operator==(const TermPair&) const = default;
};

enum class Polarity { positive, negative };

// Inclusive token range.
using Span = std::pair<std::size_t, std::size_t>;

// Spans are stored sentence-local; extractor layouts shift them into model
// coordinates when batches are built.
struct LabeledExample {
  std::vector<std::string> src_term_tokens;
  std::vector<std::string> tgt_sentence_tokens;
  std::optional<Span> span;
  std::string src_lang;
  std::string tgt_lang;
  std::string category;
  Polarity polarity = Polarity::negative;
  bool operator==(const LabeledExample&) const = default;
};

// Greedy left-to-right non-overlapping matches of `term` inside `sentence`.
std::vector<Span> find_term_occurrences(std::span<const std::string> term,
                                        std::span<const std::string> sentence);

struct BuildOptions {
  double neg_ratio = 1.0;
  // Applies to the longest layout, [/s] term [/s] sentence [/s].
  std::size_t max_len = 100;
  std::uint64_t seed = 7;
  // Prefer negatives that contain some other pair's target term.
  bool hard_negatives = false;
  double train_frac = 0.8;
  double valid_frac = 0.1;
  std::string src_lang = "zh";
  std::string tgt_lang = "en";
};

struct BuildStats {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t terms_without_positives = 0;
  std::size_t boundary_drops = 0;
  std::size_t overlength_drops = 0;
  std::size_t long_terms = 0;
  std::size_t negative_shortfall = 0;
  std::size_t duplicate_titles = 0;
  std::size_t src_title_hits = 0;
};

struct Dataset {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> valid;
  std::vector<LabeledExample> test;
  BuildStats stats;
};

// One positive per target title containing the pair's target term (first
// occurrence is gold), each matched by negatives of the same source term
// drawn from titles that do not contain it. A positive and its negatives
// form one unit; units are shuffled and split train/valid/test. Source
// titles only feed the hit counter; targets carry the labels.
Dataset build_examples(std::span<const TermPair> pairs, std::span<const std::string> src_titles,
                       std::span<const std::string> tgt_titles, const text::MergeTable& merges,
                       const BuildOptions& options = {});

// Positive: the span detokenizes to the term; negative: no occurrence.
// Returns an empty string when the example is consistent, else the reason.
std::string check_example(const LabeledExample& ex, const std::vector<std::string>& tgt_term);

std::vector<TermPair> read_term_pairs(const std::filesystem::path& path);
void write_term_pairs(const std::filesystem::path& path, std::span<const TermPair> pairs);
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

std::string to_jsonl_line(const LabeledExample& ex);
LabeledExample from_jsonl_line(const std::string& line);
void write_jsonl(const std::filesystem::path& path, std::span<const LabeledExample> examples);
std::vector<LabeledExample> read_jsonl(const std::filesystem::path& path);

}  // namespace btx::data
