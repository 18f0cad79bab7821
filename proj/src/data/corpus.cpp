#include "btx/data/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "btx/core/errors.hpp"

namespace btx::data {

namespace {

using Tokens = std::vector<std::string>;

bool continues(const std::string& token) {
  return token.size() >= text::kContinuation.size() &&
         std::string_view(token).substr(token.size() - text::kContinuation.size()) ==
             text::kContinuation;
}

// First match that also starts on a word boundary of the sentence.
std::optional<Span> first_word_aligned(const std::vector<Span>& hits, const Tokens& sentence) {
  for (const auto& h : hits) {
    if (h.first == 0 || !continues(sentence[h.first - 1])) return h;
  }
  return std::nullopt;
}

bool contains_words(const Tokens& title_words, const Tokens& term_words) {
  return !find_term_occurrences(term_words, title_words).empty();
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// k distinct draws from pool, in draw order.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k,
                                                    std::mt19937_64& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

struct Title {
  std::string text;
  Tokens words;
  Tokens tokens;
};

}  // namespace

std::vector<Span> find_term_occurrences(std::span<const std::string> term,
                                        std::span<const std::string> sentence) {
  std::vector<Span> out;
  if (term.empty() || term.size() > sentence.size()) return out;
  std::size_t i = 0;
  while (i + term.size() <= sentence.size()) {
    if (std::equal(term.begin(), term.end(), sentence.begin() + static_cast<std::ptrdiff_t>(i))) {
      out.emplace_back(i, i + term.size() - 1);
      i += term.size();
    } else {
      ++i;
    }
  }
  return out;
}

Dataset build_examples(std::span<const TermPair> pairs, std::span<const std::string> src_titles,
                       std::span<const std::string> tgt_titles, const text::MergeTable& merges,
                       const BuildOptions& options) {
  if (tgt_titles.empty()) throw PreconditionError("build_examples: empty target title pool");
  if (options.neg_ratio < 0) throw PreconditionError("build_examples: neg_ratio must be >= 0");
  Dataset ds;
  auto& stats = ds.stats;

  std::vector<Title> titles;
  {
    std::set<std::string> seen;
    for (const auto& t : tgt_titles) {
      const auto words = text::split_words(t);
      if (words.empty()) continue;
      if (!seen.insert(t).second) {
        ++stats.duplicate_titles;
        continue;
      }
      titles.push_back({t, words, text::apply_bpe(t, merges)});
    }
  }
  if (titles.empty()) throw PreconditionError("build_examples: empty target title pool");

  std::vector<Tokens> src_title_words;
  src_title_words.reserve(src_titles.size());
  for (const auto& t : src_titles) src_title_words.push_back(text::split_words(t));

  struct TermInfo {
    Tokens src_tokens, tgt_tokens, tgt_words;
  };
  std::vector<TermInfo> info;
  for (const auto& p : pairs) {
    TermInfo ti{text::apply_bpe(p.src_term, merges), text::apply_bpe(p.tgt_term, merges),
                text::split_words(p.tgt_term)};
    if (ti.src_tokens.empty() || ti.tgt_tokens.empty()) {
      throw PreconditionError("build_examples: empty term in pair \"" + p.src_term + "\" / \"" +
                              p.tgt_term + "\"");
    }
    if (ti.tgt_tokens.size() > 5 || ti.src_tokens.size() > 5) ++stats.long_terms;
    info.push_back(std::move(ti));
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::vector<LabeledExample>> units;

  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& p = pairs[pi];
    const auto& ti = info[pi];
    const auto src_words = text::split_words(p.src_term);
    for (const auto& w : src_title_words) stats.src_title_hits += contains_words(w, src_words);

    auto fits = [&](const Title& t) {
      return ti.src_tokens.size() + t.tokens.size() + 3 <= options.max_len;
    };

    std::vector<LabeledExample> positives;
    std::vector<std::size_t> negative_pool;
    std::vector<std::size_t> hard_pool;
    for (std::size_t k = 0; k < titles.size(); ++k) {
      const auto& t = titles[k];
      const auto hits = find_term_occurrences(ti.tgt_tokens, t.tokens);
      if (hits.empty()) {
        if (contains_words(t.words, ti.tgt_words)) {
          ++stats.boundary_drops;
          continue;
        }
        if (!fits(t)) continue;
        negative_pool.push_back(k);
        if (options.hard_negatives) {
          for (std::size_t o = 0; o < info.size(); ++o) {
            if (o != pi && !find_term_occurrences(info[o].tgt_tokens, t.tokens).empty()) {
              hard_pool.push_back(k);
              break;
            }
          }
        }
        continue;
      }
      const auto gold = first_word_aligned(hits, t.tokens);
      if (!gold) {
        if (contains_words(t.words, ti.tgt_words)) ++stats.boundary_drops;
        continue;
      }
      if (!fits(t)) {
        ++stats.overlength_drops;
        continue;
      }
      LabeledExample ex;
      ex.src_term_tokens = ti.src_tokens;
      ex.tgt_sentence_tokens = t.tokens;
      ex.span = *gold;
      ex.src_lang = options.src_lang;
      ex.tgt_lang = options.tgt_lang;
      ex.category = p.category;
      ex.polarity = Polarity::positive;
      positives.push_back(std::move(ex));
    }
    if (positives.empty()) {
      ++stats.terms_without_positives;
      continue;
    }

    const auto want = static_cast<std::size_t>(
        std::llround(options.neg_ratio * static_cast<double>(positives.size())));
    if (want > 0 && negative_pool.empty()) {
      throw PreconditionError("build_examples: no negative titles for term \"" + p.tgt_term +
                              "\"");
    }
    std::vector<std::size_t> chosen;
    if (options.hard_negatives) {
      chosen = sample_without_replacement(hard_pool, want, rng);
      if (chosen.size() < want) {
        std::set<std::size_t> used(chosen.begin(), chosen.end());
        std::vector<std::size_t> rest;
        for (const auto k : negative_pool)
          if (!used.count(k)) rest.push_back(k);
        for (const auto k : sample_without_replacement(rest, want - chosen.size(), rng))
          chosen.push_back(k);
      }
    } else {
      chosen = sample_without_replacement(negative_pool, want, rng);
    }
    stats.negative_shortfall += want - chosen.size();

    // Negatives are dealt round-robin onto the positives' units.
    for (auto& ex : positives) {
      units.emplace_back();
      units.back().push_back(std::move(ex));
    }
    const std::size_t first_unit = units.size() - positives.size();
    for (std::size_t c = 0; c < chosen.size(); ++c) {
      LabeledExample ex;
      ex.src_term_tokens = ti.src_tokens;
      ex.tgt_sentence_tokens = titles[chosen[c]].tokens;
      ex.src_lang = options.src_lang;
      ex.tgt_lang = options.tgt_lang;
      ex.category = p.category;
      ex.polarity = Polarity::negative;
      units[first_unit + c % positives.size()].push_back(std::move(ex));
    }
    stats.positives += positives.size();
    stats.negatives += chosen.size();
  }

  std::shuffle(units.begin(), units.end(), rng);
  const std::size_t n = units.size();
  const auto n_train = static_cast<std::size_t>(std::floor(options.train_frac * n));
  const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(std::floor(options.valid_frac * n)));
  for (std::size_t u = 0; u < n; ++u) {
    auto& dst = u < n_train ? ds.train : (u < n_train + n_valid ? ds.valid : ds.test);
    for (auto& ex : units[u]) dst.push_back(std::move(ex));
  }
  return ds;
}

std::string check_example(const LabeledExample& ex, const std::vector<std::string>& tgt_term) {
  const auto hits = find_term_occurrences(tgt_term, ex.tgt_sentence_tokens);
  if (ex.polarity == Polarity::negative) {
    if (ex.span) return "negative example carries a span";
    if (!hits.empty()) return "negative sentence contains the target term";
    return {};
  }
  if (!ex.span) return "positive example without span";
  const auto [s, e] = *ex.span;
  if (s > e || e >= ex.tgt_sentence_tokens.size()) return "span out of range";
  const std::span<const std::string> piece(ex.tgt_sentence_tokens.data() + s, e - s + 1);
  if (text::detokenize(piece) != text::detokenize(tgt_term)) return "span does not spell the term";
  return {};
}

std::vector<TermPair> read_term_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<TermPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected src_term<TAB>tgt_term<TAB>category");
    }
    TermPair p{line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)};
    if (text::split_words(p.src_term).empty() || text::split_words(p.tgt_term).empty()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": empty term");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_term_pairs(const std::filesystem::path& path, std::span<const TermPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : pairs) out << p.src_term << '\t' << p.tgt_term << '\t' << p.category << '\n';
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

std::string to_jsonl_line(const LabeledExample& ex) {
  nlohmann::ordered_json j;
  j["src_term_tokens"] = ex.src_term_tokens;
  j["tgt_sentence_tokens"] = ex.tgt_sentence_tokens;
  if (ex.span) {
    j["span"] = {ex.span->first, ex.span->second};
  } else {
    j["span"] = nullptr;
  }
  j["src_lang"] = ex.src_lang;
  j["tgt_lang"] = ex.tgt_lang;
  j["category"] = ex.category;
  j["polarity"] = ex.polarity == Polarity::positive ? "positive" : "negative";
  return j.dump();
}

LabeledExample from_jsonl_line(const std::string& line) {
  LabeledExample ex;
  try {
    const auto j = nlohmann::json::parse(line);
    ex.src_term_tokens = j.at("src_term_tokens").get<std::vector<std::string>>();
    ex.tgt_sentence_tokens = j.at("tgt_sentence_tokens").get<std::vector<std::string>>();
    if (!j.at("span").is_null()) {
      const auto s = j.at("span").get<std::vector<std::size_t>>();
      if (s.size() != 2) throw FormatError("span must have two entries");
      ex.span = Span{s[0], s[1]};
    }
    ex.src_lang = j.at("src_lang").get<std::string>();
    ex.tgt_lang = j.at("tgt_lang").get<std::string>();
    ex.category = j.at("category").get<std::string>();
    const auto pol = j.at("polarity").get<std::string>();
    if (pol == "positive") {
      ex.polarity = Polarity::positive;
    } else if (pol == "negative") {
      ex.polarity = Polarity::negative;
    } else {
      throw FormatError("bad polarity " + pol);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad example line: ") + e.what());
  }
  if ((ex.polarity == Polarity::positive) != ex.span.has_value()) {
    throw FormatError("example polarity disagrees with span");
  }
  if (ex.span && (ex.span->first > ex.span->second ||
                  ex.span->second >= ex.tgt_sentence_tokens.size())) {
    throw FormatError("example span out of range");
  }
  return ex;
}

void write_jsonl(const std::filesystem::path& path, std::span<const LabeledExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : examples) out << to_jsonl_line(ex) << '\n';
}

std::vector<LabeledExample> read_jsonl(const std::filesystem::path& path) {
  std::vector<LabeledExample> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(from_jsonl_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace btx::data
