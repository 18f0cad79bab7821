#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "btx/core/errors.hpp"
#include "btx/data/corpus.hpp"
#include "btx/data/synthetic.hpp"

using namespace btx;
using namespace btx::data;

namespace {

using Tokens = std::vector<std::string>;

// All start positions with a literal match, then a greedy non-overlapping pick.
std::vector<Span> quadratic_occurrences(const Tokens& term, const Tokens& sentence) {
  std::vector<Span> all;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    for (std::size_t j = i; j < sentence.size(); ++j) {
      const Tokens sub(sentence.begin() + static_cast<long>(i),
                       sentence.begin() + static_cast<long>(j) + 1);
      if (sub == term) all.emplace_back(i, j);
    }
  }
  std::vector<Span> picked;
  for (const auto& s : all) {
    if (picked.empty() || s.first > picked.back().second) picked.push_back(s);
  }
  return picked;
}

text::MergeTable whole_word_merges(const std::vector<std::string>& lines) {
  return text::learn_bpe(lines, 100000);
}

std::multiset<std::string> keys(const std::vector<LabeledExample>& xs) {
  std::multiset<std::string> out;
  for (const auto& x : xs) out.insert(text::detokenize(x.src_term_tokens) + "|" + text::detokenize(x.tgt_sentence_tokens));
  return out;
}

}  // namespace

TEST_CASE("find_term_occurrences examples") {
  CHECK(find_term_occurrences(Tokens{"a", "b"}, Tokens{"x", "a", "b", "y"}) ==
        std::vector<Span>{{1, 2}});
  CHECK(find_term_occurrences(Tokens{"a"}, Tokens{"a", "a"}) == std::vector<Span>{{0, 0}, {1, 1}});
  CHECK(find_term_occurrences(Tokens{"a", "a"}, Tokens{"a", "a", "a"}) == std::vector<Span>{{0, 1}});
  CHECK(find_term_occurrences(Tokens{"q"}, Tokens{"a", "b"}).empty());
}

TEST_CASE("find_term_occurrences matches a quadratic oracle on 100 random pairs") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> sym(0, 2), tl(1, 3), sl(1, 15);
  for (int trial = 0; trial < 100; ++trial) {
    Tokens term(static_cast<std::size_t>(tl(rng))), sentence(static_cast<std::size_t>(sl(rng)));
    for (auto& t : term) t = std::string(1, static_cast<char>('a' + sym(rng)));
    for (auto& t : sentence) t = std::string(1, static_cast<char>('a' + sym(rng)));
    CHECK(find_term_occurrences(term, sentence) == quadratic_occurrences(term, sentence));
  }
}

TEST_CASE("build_examples: hand-enumerated 3 pairs x 10 titles") {
  const std::vector<TermPair> pairs = {
      {"xa ya", "red shirt", "top"}, {"xb yb", "blue dress", "dress"}, {"xc yc", "gold ring", "jewel"}};
  const std::vector<std::string> titles = {
      "red shirt for men", "blue dress long",    "cheap red shirt red shirt", "summer blue dress",
      "red hat",           "shirt red",          "green dress blue",          "red shirt blue dress",
      "plain text here",   "dress blue shirt"};
  std::vector<std::string> corpus = titles;
  for (const auto& p : pairs) {
    corpus.push_back(p.src_term);
    corpus.push_back(p.tgt_term);
  }
  const auto merges = whole_word_merges(corpus);
  const auto ds = build_examples(pairs, {}, titles, merges);

  std::vector<LabeledExample> all = ds.train;
  all.insert(all.end(), ds.valid.begin(), ds.valid.end());
  all.insert(all.end(), ds.test.begin(), ds.test.end());

  using Row = std::tuple<std::string, std::string, std::size_t, std::size_t>;
  std::multiset<Row> positives;
  std::map<std::string, std::vector<std::string>> negatives;
  for (const auto& ex : all) {
    const auto src = text::detokenize(ex.src_term_tokens);
    const auto sent = text::detokenize(ex.tgt_sentence_tokens);
    if (ex.polarity == Polarity::positive) {
      positives.insert({src, sent, ex.span->first, ex.span->second});
    } else {
      CHECK_FALSE(ex.span.has_value());
      negatives[src].push_back(sent);
    }
  }
  const std::multiset<Row> expected = {
      {"xa ya", "red shirt for men", 0, 1},        {"xa ya", "cheap red shirt red shirt", 1, 2},
      {"xa ya", "red shirt blue dress", 0, 1},     {"xb yb", "blue dress long", 0, 1},
      {"xb yb", "summer blue dress", 1, 2},        {"xb yb", "red shirt blue dress", 2, 3}};
  CHECK(positives == expected);

  const std::set<std::string> pool_a = {titles[1], titles[3], titles[4], titles[5],
                                        titles[6], titles[8], titles[9]};
  const std::set<std::string> pool_b = {titles[0], titles[2], titles[4], titles[5],
                                        titles[6], titles[8], titles[9]};
  REQUIRE(negatives["xa ya"].size() == 3);
  REQUIRE(negatives["xb yb"].size() == 3);
  CHECK(negatives.count("xc yc") == 0);
  for (const auto& s : negatives["xa ya"]) CHECK(pool_a.count(s) == 1);
  for (const auto& s : negatives["xb yb"]) CHECK(pool_b.count(s) == 1);
  CHECK(std::set<std::string>(negatives["xa ya"].begin(), negatives["xa ya"].end()).size() == 3);

  CHECK(ds.stats.positives == 6);
  CHECK(ds.stats.negatives == 6);
  CHECK(ds.stats.terms_without_positives == 1);
  CHECK(ds.train.size() + ds.valid.size() + ds.test.size() == 12);
}

TEST_CASE("build_examples: errors and options") {
  const std::vector<TermPair> pairs = {{"s t", "a b", "c"}};
  const text::MergeTable none;
  CHECK_THROWS_AS(build_examples(pairs, {}, std::vector<std::string>{}, none), PreconditionError);
  // Only containing titles: nothing to sample negatives from.
  CHECK_THROWS_AS(build_examples(pairs, {}, std::vector<std::string>{"a b", "x a b"}, none),
                  PreconditionError);

  BuildOptions tight;
  tight.max_len = 8;  // 2 term tokens + 3 separators leaves 3 sentence tokens
  const auto ds = build_examples(pairs, {}, std::vector<std::string>{"a b", "xx a b", "q"}, none, tight);
  CHECK(ds.stats.positives == 1);
  CHECK(ds.stats.overlength_drops == 1);
}

TEST_CASE("synthetic world: determinism and infeasible configs") {
  SyntheticWorldConfig c;
  c.num_titles = 500;
  const auto a = gen_synthetic_world(c);
  const auto b = gen_synthetic_world(c);
  CHECK(a.pairs == b.pairs);
  CHECK(a.tgt_titles == b.tgt_titles);
  CHECK(a.src_titles == b.src_titles);
  c.seed = 8;
  CHECK(gen_synthetic_world(c).tgt_titles != a.tgt_titles);

  SyntheticWorldConfig bad;
  bad.title_min = 3;
  CHECK_THROWS_AS(gen_synthetic_world(bad), PreconditionError);
  bad = {};
  bad.term_max = 6;
  CHECK_THROWS_AS(gen_synthetic_world(bad), PreconditionError);
  bad = {};
  bad.tgt_vocab = 150;
  CHECK_THROWS_AS(gen_synthetic_world(bad), PreconditionError);
}

TEST_CASE("synthetic world: word-by-word translation and term lengths") {
  SyntheticWorldConfig c;
  c.num_titles = 300;
  const auto w = gen_synthetic_world(c);
  REQUIRE(w.pairs.size() == 50);
  for (const auto& p : w.pairs) {
    const auto s = text::split_words(p.src_term);
    const auto t = text::split_words(p.tgt_term);
    REQUIRE(s.size() == t.size());
    CHECK(s.size() >= 2);
    CHECK(s.size() <= 5);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto si = std::find(w.src_words.begin(), w.src_words.end(), s[i]) - w.src_words.begin();
      const auto ti = std::find(w.tgt_words.begin(), w.tgt_words.end(), t[i]) - w.tgt_words.begin();
      CHECK(si == ti);
    }
  }
}

TEST_CASE("synthetic world: embed fraction 0 gives no positives") {
  SyntheticWorldConfig c;
  c.num_titles = 400;
  c.embed_fraction = 0.0;
  const auto w = gen_synthetic_world(c);
  std::vector<std::string> corpus = w.tgt_titles;
  for (const auto& p : w.pairs) corpus.push_back(p.tgt_term);
  const auto ds = build_examples(w.pairs, w.src_titles, w.tgt_titles, whole_word_merges(corpus));
  CHECK(ds.stats.positives == 0);
}

TEST_CASE("synthetic world 200/200, 50 pairs, 5000 titles: dataset invariants hold exhaustively") {
  SyntheticWorldConfig c;
  c.num_titles = 5000;
  const auto w = gen_synthetic_world(c);
  std::vector<std::string> corpus = w.tgt_titles;
  corpus.insert(corpus.end(), w.src_titles.begin(), w.src_titles.end());
  const auto merges = text::learn_bpe(corpus, 8000);
  const auto ds = build_examples(w.pairs, w.src_titles, w.tgt_titles, merges);

  std::map<std::string, Tokens> tgt_of;
  for (const auto& p : w.pairs) tgt_of[text::detokenize(text::apply_bpe(p.src_term, merges))] = text::apply_bpe(p.tgt_term, merges);

  std::size_t pos = 0, neg = 0;
  std::set<std::string> seen;
  for (const auto* split : {&ds.train, &ds.valid, &ds.test}) {
    std::set<std::string> here;
    for (const auto& ex : *split) {
      const auto src = text::detokenize(ex.src_term_tokens);
      REQUIRE(tgt_of.count(src) == 1);
      CHECK(check_example(ex, tgt_of[src]).empty());
      (ex.polarity == Polarity::positive ? pos : neg) += 1;
      here.insert(src + "|" + text::detokenize(ex.tgt_sentence_tokens));
    }
    for (const auto& k : here) CHECK(seen.insert(k).second);
  }
  CHECK(pos > 0);
  CHECK(pos == neg);
  CHECK(ds.stats.terms_without_positives == 0);
  CHECK(ds.stats.negative_shortfall == 0);

  const auto again = build_examples(w.pairs, w.src_titles, w.tgt_titles, merges);
  CHECK(again.train == ds.train);
  CHECK(again.test == ds.test);
  CHECK(keys(again.valid) == keys(ds.valid));
}

TEST_CASE("hard negatives contain another pair's target term") {
  SyntheticWorldConfig c;
  c.num_titles = 1000;
  const auto w = gen_synthetic_world(c);
  std::vector<std::string> corpus = w.tgt_titles;
  const auto merges = whole_word_merges(corpus);
  BuildOptions o;
  o.hard_negatives = true;
  const auto ds = build_examples(w.pairs, {}, w.tgt_titles, merges, o);
  std::vector<Tokens> terms;
  for (const auto& p : w.pairs) terms.push_back(text::apply_bpe(p.tgt_term, merges));
  std::size_t neg = 0, hard = 0;
  for (const auto& ex : ds.train) {
    if (ex.polarity != Polarity::negative) continue;
    ++neg;
    hard += std::any_of(terms.begin(), terms.end(), [&](const Tokens& t) {
      return !find_term_occurrences(t, ex.tgt_sentence_tokens).empty();
    });
  }
  CHECK(neg > 0);
  CHECK(hard == neg);
}

TEST_CASE("JSONL and TSV round trips") {
  LabeledExample pos{{"S@@", "T"}, {"a", "b", "c"}, Span{1, 2}, "zh", "en", "dress", Polarity::positive};
  LabeledExample neg{{"S"}, {"x"}, std::nullopt, "zh", "en", "dress", Polarity::negative};
  CHECK(from_jsonl_line(to_jsonl_line(pos)) == pos);
  CHECK(from_jsonl_line(to_jsonl_line(neg)) == neg);
  CHECK(to_jsonl_line(neg).find("\"span\":null") != std::string::npos);
  CHECK_THROWS_AS(from_jsonl_line("{\"src_term_tokens\": 3}"), FormatError);
  CHECK_THROWS_AS(from_jsonl_line(R"({"src_term_tokens":["a"],"tgt_sentence_tokens":["b"],"span":[0,4],"src_lang":"zh","tgt_lang":"en","category":"c","polarity":"positive"})"),
                  FormatError);

  const auto dir = std::filesystem::temp_directory_path();
  const std::vector<LabeledExample> xs = {pos, neg};
  write_jsonl(dir / "btx_ex.jsonl", xs);
  CHECK(read_jsonl(dir / "btx_ex.jsonl") == xs);

  const std::vector<TermPair> pairs = {{"\xe4\xb8\xa4\xe4\xbb\xb6 \xe5\xa5\x97\xe8\xa3\x85", "two piece suit", "dress"}};
  write_term_pairs(dir / "btx_pairs.tsv", pairs);
  CHECK(read_term_pairs(dir / "btx_pairs.tsv") == pairs);
  write_lines(dir / "btx_bad.tsv", std::vector<std::string>{"only\tone"});
  CHECK_THROWS_AS(read_term_pairs(dir / "btx_bad.tsv"), FormatError);
}
