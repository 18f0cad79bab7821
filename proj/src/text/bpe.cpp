#include "btx/text/bpe.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "btx/core/errors.hpp"
#include "btx/core/hash.hpp"

namespace btx::text {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string rank_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left);
  key.push_back(' ');
  key.append(right);
  return key;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead & 0xE0) == 0xC0) return 2;
  if ((lead & 0xF0) == 0xE0) return 3;
  if ((lead & 0xF8) == 0xF0) return 4;
  return 1;
}

using Pair = std::pair<std::string, std::string>;

// Incremental pair statistics over the unique-word table.
class PairStats {
 public:
  PairStats(std::vector<std::vector<std::string>>& words, const std::vector<long>& freq)
      : words_(words), freq_(freq) {
    for (std::size_t w = 0; w < words_.size(); ++w) add_word(w);
  }

  std::optional<Pair> best() const {
    if (order_.empty()) return std::nullopt;
    return order_.begin()->second;
  }

  void merge(const Pair& p) {
    const auto it = where_.find(p);
    if (it == where_.end()) return;
    const std::set<std::size_t> affected = it->second;
    const std::string joined = p.first + p.second;
    for (const std::size_t w : affected) {
      remove_word(w);
      auto& sym = words_[w];
      std::vector<std::string> out;
      out.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == p.first && sym[i + 1] == p.second) {
          out.push_back(joined);
          ++i;
        } else {
          out.push_back(sym[i]);
        }
      }
      sym = std::move(out);
      add_word(w);
    }
  }

 private:
  struct ByCount {
    bool operator()(const std::pair<long, Pair>& a, const std::pair<long, Pair>& b) const {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    }
  };

  void bump(const Pair& p, long delta, std::size_t w) {
    long& c = count_[p];
    if (c > 0) order_.erase({c, p});
    c += delta;
    if (c > 0) {
      order_.insert({c, p});
    } else {
      count_.erase(p);
    }
    if (delta > 0) {
      where_[p].insert(w);
    } else if (auto it = where_.find(p); it != where_.end()) {
      it->second.erase(w);
      if (it->second.empty()) where_.erase(it);
    }
  }

  void add_word(std::size_t w) {
    const auto& s = words_[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) bump({s[i], s[i + 1]}, freq_[w], w);
  }
  void remove_word(std::size_t w) {
    const auto& s = words_[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) bump({s[i], s[i + 1]}, -freq_[w], w);
  }

  std::vector<std::vector<std::string>>& words_;
  const std::vector<long>& freq_;
  std::map<Pair, long> count_;
  std::map<Pair, std::set<std::size_t>> where_;
  std::set<std::pair<long, Pair>, ByCount> order_;
};

std::map<std::string, long> word_counts(std::span<const std::string> lines) {
  std::map<std::string, long> counts;
  for (const auto& line : lines) {
    for (auto& w : split_words(line)) ++counts[std::move(w)];
  }
  return counts;
}

std::string fingerprint_of(const std::map<std::string, long>& counts) {
  Fnv1a h;
  for (const auto& [w, c] : counts) {
    h.field(w);
    h.field(std::to_string(c));
  }
  return h.hex();
}

}  // namespace

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) words.emplace_back(line.substr(start, i - start));
  }
  return words;
}

std::vector<std::string> utf8_symbols(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    std::size_t len = utf8_length(static_cast<unsigned char>(word[i]));
    if (i + len > word.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

MergeTable::MergeTable(std::vector<MergeRule> rules, std::string fingerprint)
    : rules_(std::move(rules)), fingerprint_(std::move(fingerprint)) {
  ranks_.reserve(rules_.size());
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& r = rules_[i];
    if (r.left.empty() || r.right.empty()) {
      throw PreconditionError("merge rule " + std::to_string(i) + " has an empty symbol");
    }
    if (!ranks_.emplace(rank_key(r.left, r.right), i).second) {
      throw PreconditionError("duplicate merge rule at position " + std::to_string(i) + ": " +
                              r.left + " " + r.right);
    }
  }
}

std::optional<std::size_t> MergeTable::rank(std::string_view left, std::string_view right) const {
  const auto it = ranks_.find(rank_key(left, right));
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

void MergeTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write merges file " + path.string());
  out << "#version: " << fingerprint_ << "\n";
  for (const auto& r : rules_) out << r.left << ' ' << r.right << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read merges file " + path.string());
  std::string line;
  std::string fingerprint;
  std::vector<MergeRule> rules;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("#version:", 0) == 0) {
      fingerprint = line.substr(9);
      if (!fingerprint.empty() && fingerprint.front() == ' ') fingerprint.erase(0, 1);
      continue;
    }
    if (line.empty()) continue;
    const auto parts = split_words(line);
    if (parts.size() != 2) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected \"left right\"");
    }
    rules.push_back({parts[0], parts[1]});
  }
  return MergeTable(std::move(rules), std::move(fingerprint));
}

std::string corpus_fingerprint(std::span<const std::string> lines) {
  return fingerprint_of(word_counts(lines));
}

MergeTable learn_bpe(std::span<const std::string> lines, std::size_t num_merges) {
  const auto counts = word_counts(lines);
  if (counts.empty()) throw PreconditionError("learn_bpe: empty corpus");

  std::vector<std::vector<std::string>> words;
  std::vector<long> freq;
  words.reserve(counts.size());
  freq.reserve(counts.size());
  for (const auto& [w, c] : counts) {
    words.push_back(utf8_symbols(w));
    freq.push_back(c);
  }

  PairStats stats(words, freq);
  std::vector<MergeRule> rules;
  rules.reserve(num_merges);
  while (rules.size() < num_merges) {
    const auto best = stats.best();
    if (!best) break;
    rules.push_back({best->first, best->second});
    stats.merge(*best);
  }
  return MergeTable(std::move(rules), fingerprint_of(counts));
}

std::vector<std::string> segment_word(std::string_view word, const MergeTable& merges) {
  std::vector<std::string> sym = utf8_symbols(word);
  if (merges.size() == 0) return sym;
  while (sym.size() > 1) {
    std::size_t best_rank = merges.size();
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
      if (const auto r = merges.rank(sym[i], sym[i + 1]); r && *r < best_rank) best_rank = *r;
    }
    if (best_rank == merges.size()) break;
    const auto& rule = merges.rules()[best_rank];
    std::vector<std::string> out;
    out.reserve(sym.size());
    for (std::size_t i = 0; i < sym.size(); ++i) {
      if (i + 1 < sym.size() && sym[i] == rule.left && sym[i + 1] == rule.right) {
        out.push_back(rule.left + rule.right);
        ++i;
      } else {
        out.push_back(std::move(sym[i]));
      }
    }
    sym = std::move(out);
  }
  return sym;
}

std::vector<std::string> apply_bpe(std::string_view line, const MergeTable& merges) {
  std::vector<std::string> tokens;
  for (const auto& w : split_words(line)) {
    auto pieces = segment_word(w, merges);
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) pieces[i].append(kContinuation);
    for (auto& p : pieces) tokens.push_back(std::move(p));
  }
  return tokens;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool glue = true;
  for (const auto& t : tokens) {
    if (!glue) out.push_back(' ');
    const std::string_view v(t);
    if (v.size() >= kContinuation.size() && v.substr(v.size() - kContinuation.size()) == kContinuation) {
      out.append(v.substr(0, v.size() - kContinuation.size()));
      glue = true;
    } else {
      out.append(v);
      glue = false;
    }
  }
  return out;
}

}  // namespace btx::text
