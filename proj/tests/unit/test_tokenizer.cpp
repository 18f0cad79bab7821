#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "btx/core/errors.hpp"
#include "btx/text/bpe.hpp"
#include "btx/text/vocab.hpp"
#include "bpe_oracle.hpp"

using namespace btx::text;

using namespace bpe_oracle;

TEST_CASE("learn_bpe: (a, b) is the first merge of [\"ab ab\", \"abc\"]") {
  const std::vector<std::string> corpus = {"ab ab", "abc"};
  const auto table = learn_bpe(corpus, 1);
  REQUIRE(table.size() == 1);
  CHECK(table.rules()[0] == MergeRule{"a", "b"});
  CHECK(brute_force_bpe(corpus, 1) == table.rules());
}

TEST_CASE("learn_bpe: zero merges gives an empty table and character tokens") {
  const std::vector<std::string> corpus = {"hello world"};
  const auto table = learn_bpe(corpus, 0);
  CHECK(table.size() == 0);
  CHECK(apply_bpe("hello", table) ==
        std::vector<std::string>{"h@@", "e@@", "l@@", "l@@", "o"});
}

TEST_CASE("learn_bpe: empty corpus is an error") {
  CHECK_THROWS_AS(learn_bpe(std::vector<std::string>{}, 5), btx::PreconditionError);
  CHECK_THROWS_AS(learn_bpe(std::vector<std::string>{"", "  "}, 5), btx::PreconditionError);
}

TEST_CASE("learn_bpe matches a brute-force recount oracle on 120 random corpora") {
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    std::mt19937_64 rng(seed);
    const auto lines = random_lines(rng, 30, kAlphabet);
    bool any = false;
    for (const auto& l : lines) any = any || !split_words(l).empty();
    if (!any) continue;
    const std::size_t n = 1 + seed % 40;
    CHECK_MESSAGE(learn_bpe(lines, n).rules() == brute_force_bpe(lines, n), "seed " << seed);
  }
}

TEST_CASE("learn_bpe: every rule's symbols exist before the rule") {
  std::mt19937_64 rng(11);
  const auto lines = random_lines(rng, 200, kAlphabet);
  const auto table = learn_bpe(lines, 200);
  std::set<std::string> known;
  for (const auto& l : lines)
    for (const auto& w : split_words(l))
      for (const auto& c : utf8_symbols(w)) known.insert(c);
  for (const auto& r : table.rules()) {
    CHECK(known.count(r.left) == 1);
    CHECK(known.count(r.right) == 1);
    known.insert(r.left + r.right);
  }
}

TEST_CASE("learn_bpe does not depend on line order") {
  std::mt19937_64 rng(5);
  auto lines = random_lines(rng, 100, kAlphabet);
  const auto a = learn_bpe(lines, 60);
  std::shuffle(lines.begin(), lines.end(), rng);
  const auto b = learn_bpe(lines, 60);
  CHECK(a.rules() == b.rules());
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("apply_bpe: hand-traced \"abab abc\" with merge (a, b)") {
  const MergeTable table({{"a", "b"}}, "");
  CHECK(apply_bpe("abab abc", table) == std::vector<std::string>{"ab@@", "ab", "ab@@", "c"});
  CHECK(apply_bpe("", table).empty());
}

TEST_CASE("apply_bpe matches sequential rule application on 100 random tables") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const auto lines = random_lines(rng, 40, kAlphabet);
    bool any = false;
    for (const auto& l : lines) any = any || !split_words(l).empty();
    if (!any) continue;
    const auto table = learn_bpe(lines, 1 + seed % 50);
    for (int k = 0; k < 20; ++k) {
      const auto w = random_word(rng, kAlphabet, 10);
      CHECK_MESSAGE(segment_word(w, table) == sequential_apply(w, table), "seed " << seed);
    }
  }
}

TEST_CASE("apply_bpe: unknown characters pass through") {
  const MergeTable table({{"a", "b"}}, "");
  CHECK(apply_bpe("xyz", table) == std::vector<std::string>{"x@@", "y@@", "z"});
}

TEST_CASE("apply_bpe: Chinese without spaces segments at character level") {
  const MergeTable table({{"\xe5\xa5\x97", "\xe8\xa3\x85"}}, "");  // 套 装
  const auto toks = apply_bpe("\xe4\xb8\xa4\xe4\xbb\xb6 \xe5\xa5\x97\xe8\xa3\x85", table);
  CHECK(toks == std::vector<std::string>{"\xe4\xb8\xa4@@", "\xe4\xbb\xb6",
                                         "\xe5\xa5\x97\xe8\xa3\x85"});
  const std::vector<std::string> display = {"\xe4\xb8\xa4@@", "\xe4\xbb\xb6"};
  CHECK(detokenize(display) == "\xe4\xb8\xa4\xe4\xbb\xb6");
}

TEST_CASE("detokenize examples") {
  CHECK(detokenize(std::vector<std::string>{"two", "piece", "suit"}) == "two piece suit");
  CHECK(detokenize(std::vector<std::string>{"ab@@", "c"}) == "abc");
  CHECK(detokenize(std::vector<std::string>{}).empty());
}

TEST_CASE("detokenize(apply_bpe(x)) == x for 1000 random lines") {
  std::mt19937_64 rng(99);
  const auto train = random_lines(rng, 300, kAlphabet);
  const auto table = learn_bpe(train, 150);
  const auto lines = random_lines(rng, 1000, kAlphabet);
  for (const auto& l : lines) {
    const auto toks = apply_bpe(l, table);
    CHECK(detokenize(toks) == l);
    CHECK(apply_bpe(l, table) == toks);
  }
}

TEST_CASE("merge table file round trip") {
  std::mt19937_64 rng(3);
  const auto table = learn_bpe(random_lines(rng, 50, kAlphabet), 40);
  const auto path = std::filesystem::temp_directory_path() / "btx_test_merges.txt";
  table.save(path);
  const auto back = MergeTable::load(path);
  CHECK(back.rules() == table.rules());
  CHECK(back.fingerprint() == table.fingerprint());
  std::filesystem::remove(path);
}

TEST_CASE("MergeTable rejects duplicate rules") {
  CHECK_THROWS_AS(MergeTable({{"a", "b"}, {"a", "b"}}, ""), btx::PreconditionError);
}

TEST_CASE("build_vocab: threshold, specials and UNK") {
  const std::vector<std::vector<std::string>> corpus = {{"a", "a", "b", "a"}, {"a", "b", "a"}};
  const auto v = build_vocab(corpus, 3);
  CHECK(v.size() == 5);
  CHECK(v.token(0) == "[/s]");
  CHECK(v.token(1) == "[MASK]");
  CHECK(v.token(2) == "[PAD]");
  CHECK(v.token(3) == "[UNK]");
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == Vocab::kUnk);

  const auto all = build_vocab(corpus, 0);
  CHECK(all.size() == 6);
  CHECK(all.find("b").has_value());
}

TEST_CASE("build_vocab: count descending, then lexicographic") {
  const std::vector<std::vector<std::string>> corpus = {{"z", "y", "y", "x", "x", "w"}};
  const auto v = build_vocab(corpus, 1);
  CHECK(v.decode(std::vector<std::int32_t>{4, 5, 6, 7}) ==
        std::vector<std::string>{"x", "y", "w", "z"});
}

TEST_CASE("build_vocab: file order does not matter") {
  std::mt19937_64 rng(8);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& l : random_lines(rng, 200, kAlphabet)) corpus.push_back(split_words(l));
  const auto a = build_vocab(corpus, 2);
  std::reverse(corpus.begin(), corpus.end());
  const auto b = build_vocab(corpus, 2);
  CHECK(a == b);
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("vocab file round trip and languages") {
  const std::vector<std::vector<std::string>> corpus = {{"red", "shirt", "red"}};
  auto v = build_vocab(corpus, 1);
  CHECK(v.lang_id("zh") == 0);
  CHECK(v.lang_id("en") == 1);
  CHECK(v.lang_id("fr") == 2);
  CHECK(v.add_language("de") == 3);
  CHECK_THROWS_AS(v.lang_id("xx"), btx::PreconditionError);
  const auto dir = std::filesystem::temp_directory_path();
  v.save(dir / "btx_vocab.tsv", dir / "btx_langs.tsv");
  const auto back = Vocab::load(dir / "btx_vocab.tsv", dir / "btx_langs.tsv");
  CHECK(back == v);
  CHECK(back.fingerprint() == v.fingerprint());
  CHECK_THROWS_AS(v.token(99), btx::IndexError);
}
