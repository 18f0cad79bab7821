#include "btx/eval/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "btx/core/errors.hpp"

namespace btx::eval {

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::size_t to_count(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size()) throw FormatError("report: bad count for " + key + ": " + value);
  return static_cast<std::size_t>(v);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Verdict to_verdict(const model::SpanPrediction& pred, std::size_t tgt_begin) {
  Verdict v;
  v.inconsistent = pred.inconsistent;
  if (pred.span) v.span = Span{pred.span->first - tgt_begin, pred.span->second - tgt_begin};
  return v;
}

double Tally::percent() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / total; }

EvalReport exact_match_precision(std::span<const Verdict> predictions,
                                 std::span<const data::LabeledExample> golds) {
  if (predictions.size() != golds.size()) {
    throw PreconditionError("exact_match_precision: " + std::to_string(predictions.size()) +
                            " predictions for " + std::to_string(golds.size()) + " examples");
  }
  EvalReport r;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const auto& g = golds[i];
    const auto& p = predictions[i];
    const bool positive = g.polarity == data::Polarity::positive;
    const bool ok = positive ? (p.span && g.span && *p.span == *g.span) : !p.span.has_value();
    auto& side = positive ? r.positive : r.negative;
    auto& cat = r.by_category[g.category];
    ++r.total;
    ++side.total;
    ++cat.total;
    r.correct += ok;
    side.correct += ok;
    cat.correct += ok;
    r.inconsistent += p.inconsistent;
  }
  r.precision = Tally{r.total, r.correct}.percent();
  return r;
}

EvalReport evaluate(const model::Extractor<float>& model, std::span<const data::LabeledExample> examples,
                    const text::Vocab& vocab, std::size_t max_len, std::size_t batch_size) {
  if (batch_size == 0) throw PreconditionError("evaluate: batch_size must be positive");
  std::vector<Verdict> verdicts;
  verdicts.reserve(examples.size());
  std::vector<model::ExtractorInput> chunk;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    chunk.clear();
    const std::size_t stop = std::min(examples.size(), start + batch_size);
    for (std::size_t i = start; i < stop; ++i) {
      chunk.push_back(model::make_extractor_input(examples[i], vocab, model.config(), max_len));
    }
    const auto preds = model.predict(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) verdicts.push_back(to_verdict(preds[i], chunk[i].tgt_begin));
  }
  return exact_match_precision(verdicts, examples);
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << "total=" << r.total << "\n"
      << "correct=" << r.correct << "\n"
      << "precision=" << fixed(r.precision) << "\n"
      << "positive.total=" << r.positive.total << "\n"
      << "positive.correct=" << r.positive.correct << "\n"
      << "positive.accuracy=" << fixed(r.positive.percent()) << "\n"
      << "negative.total=" << r.negative.total << "\n"
      << "negative.correct=" << r.negative.correct << "\n"
      << "negative.accuracy=" << fixed(r.negative.percent()) << "\n"
      << "inconsistent=" << r.inconsistent << "\n";
  for (const auto& [name, t] : r.by_category) {
    out << "category." << name << ".total=" << t.total << "\n"
        << "category." << name << ".correct=" << t.correct << "\n"
        << "category." << name << ".precision=" << fixed(t.percent()) << "\n";
  }
  return out.str();
}

EvalReport parse_report(const std::string& text) {
  EvalReport r;
  bool have_total = false, have_correct = false;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("report line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "total") {
      r.total = to_count(key, value);
      have_total = true;
    } else if (key == "correct") {
      r.correct = to_count(key, value);
      have_correct = true;
    } else if (key == "positive.total") {
      r.positive.total = to_count(key, value);
    } else if (key == "positive.correct") {
      r.positive.correct = to_count(key, value);
    } else if (key == "negative.total") {
      r.negative.total = to_count(key, value);
    } else if (key == "negative.correct") {
      r.negative.correct = to_count(key, value);
    } else if (key == "inconsistent") {
      r.inconsistent = to_count(key, value);
    } else if (key.rfind("category.", 0) == 0 && ends_with(key, ".total")) {
      r.by_category[key.substr(9, key.size() - 15)].total = to_count(key, value);
    } else if (key.rfind("category.", 0) == 0 && ends_with(key, ".correct")) {
      r.by_category[key.substr(9, key.size() - 17)].correct = to_count(key, value);
    } else if (key == "precision" || ends_with(key, ".accuracy") || ends_with(key, ".precision")) {
      // Derived from the counts.
    } else {
      throw FormatError("report line " + std::to_string(lineno) + ": unknown key " + key);
    }
  }
  if (!have_total || !have_correct) throw FormatError("report: missing total or correct");
  if (r.correct > r.total) throw FormatError("report: correct exceeds total");
  r.precision = Tally{r.total, r.correct}.percent();
  return r;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << format_report(report);
  if (!out) throw FormatError("write failed: " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_report(s.str());
}

}  // namespace btx::eval
