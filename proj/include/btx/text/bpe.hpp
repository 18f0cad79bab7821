#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace btx::text {

// Marks a subword piece that continues into the next one: "两@@ 件".
inline constexpr std::string_view kContinuation = "@@";

// Whitespace-separated words of a line.
std::vector<std::string> split_words(std::string_view line);

// UTF-8 code points of a word; stray bytes of invalid sequences are kept as
// single-byte symbols. Text without whitespace (e.g. unsegmented Chinese) is
// therefore one word whose initial symbols are its characters.
std::vector<std::string> utf8_symbols(std::string_view word);

struct MergeRule {
  std::string left;
  std::string right;
  bool operator==(const MergeRule&) const = default;
  auto operator<=>(const MergeRule&) const = default;
};

// Ordered merge rules; earlier rules have higher priority.
class MergeTable {
 public:
  MergeTable() = default;
  // Throws PreconditionError on duplicate rules.
  MergeTable(std::vector<MergeRule> rules, std::string fingerprint);

  const std::vector<MergeRule>& rules() const { return rules_; }
  const std::string& fingerprint() const { return fingerprint_; }
  std::size_t size() const { return rules_.size(); }
  std::optional<std::size_t> rank(std::string_view left, std::string_view right) const;

  // "left right" per line after a "#version:" header carrying the corpus
  // fingerprint.
  void save(const std::filesystem::path& path) const;
  static MergeTable load(const std::filesystem::path& path);

 private:
  std::vector<MergeRule> rules_;
  std::string fingerprint_;
  std::unordered_map<std::string, std::size_t> ranks_;
};

// Order-independent fingerprint of the corpus word multiset.
std::string corpus_fingerprint(std::span<const std::string> lines);

// Greedy most-frequent-pair merging over the word multiset of all lines.
// Ties go to the lexicographically smallest (left, right) pair. Stops early
// when no adjacent pair remains. Throws PreconditionError on an empty
// corpus.
MergeTable learn_bpe(std::span<const std::string> lines, std::size_t num_merges);

// Subword pieces of one word, without continuation markers.
std::vector<std::string> segment_word(std::string_view word, const MergeTable& merges);

// Tokens of a line; every non-final piece of a word carries "@@".
std::vector<std::string> apply_bpe(std::string_view line, const MergeTable& merges);

// Joins tokens with spaces, removing "@@ " continuation boundaries.
std::string detokenize(std::span<const std::string> tokens);

}  // namespace btx::text
