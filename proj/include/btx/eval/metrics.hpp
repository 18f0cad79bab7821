#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "btx/data/corpus.hpp"
#include "btx/model/extractor.hpp"

namespace btx::eval {

using data::Span;

// A decoded prediction in sentence-local coordinates.
struct Verdict {
  std::optional<Span> span;
  bool inconsistent = false;
  bool operator==(const Verdict&) const = default;
};

// Shifts a model-coordinate prediction back by the target offset.
Verdict to_verdict(const model::SpanPrediction& pred, std::size_t tgt_begin);

struct Tally {
  std::size_t total = 0;
  std::size_t correct = 0;
  double percent() const;
  bool operator==(const Tally&) const = default;
};

struct EvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  double precision = 0.0;
  Tally positive;
  Tally negative;
  std::map<std::string, Tally> by_category;
  std::size_t inconsistent = 0;
  bool operator==(const EvalReport&) const = default;
};

// Correct iff the gold is negative and the verdict is none, or the gold is
// positive and the verdict span equals it at both ends. Throws
// PreconditionError when the lists differ in length.
EvalReport exact_match_precision(std::span<const Verdict> predictions,
                                 std::span<const data::LabeledExample> golds);

// Lays out, predicts in chunks of `batch_size` and scores.
EvalReport evaluate(const model::Extractor<float>& model, std::span<const data::LabeledExample> examples,
                    const text::Vocab& vocab, std::size_t max_len, std::size_t batch_size = 64);

// key=value lines, one per field.
std::string format_report(const EvalReport& report);
// Inverse of format_report. Throws FormatError on malformed input.
EvalReport parse_report(const std::string& text);
void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace btx::eval
