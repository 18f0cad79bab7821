#include "btx/text/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "btx/core/errors.hpp"
#include "btx/core/hash.hpp"

namespace btx::text {

namespace {

std::vector<std::pair<std::string, std::int32_t>> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::pair<std::string, std::int32_t>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key<TAB>id");
    }
    std::int32_t id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad id");
    }
    if (id != static_cast<std::int32_t>(rows.size())) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": id " +
                        std::to_string(id) + " out of sequence");
    }
    rows.emplace_back(line.substr(0, tab), id);
  }
  return rows;
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens, std::vector<std::string> languages)
    : languages_(std::move(languages)) {
  tokens_.reserve(tokens.size() + kNumSpecial);
  for (const auto s : kSpecialTokens) tokens_.emplace_back(s);
  for (auto& t : tokens) tokens_.push_back(std::move(t));
  ids_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw PreconditionError("vocab: empty token at id " + std::to_string(i));
    if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw PreconditionError("vocab: duplicate token " + tokens_[i]);
    }
  }
  std::vector<std::string> seen = languages_;
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
    throw PreconditionError("vocab: duplicate language code");
  }
}

std::optional<std::int32_t> Vocab::find(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::int32_t Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocab: id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const std::int32_t> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (const auto i : ids) out.push_back(token(i));
  return out;
}

std::int32_t Vocab::lang_id(std::string_view code) const {
  for (std::size_t i = 0; i < languages_.size(); ++i) {
    if (languages_[i] == code) return static_cast<std::int32_t>(i);
  }
  throw PreconditionError("unknown language code: " + std::string(code));
}

std::int32_t Vocab::add_language(const std::string& code) {
  for (std::size_t i = 0; i < languages_.size(); ++i) {
    if (languages_[i] == code) return static_cast<std::int32_t>(i);
  }
  languages_.push_back(code);
  return static_cast<std::int32_t>(languages_.size() - 1);
}

std::string Vocab::fingerprint() const {
  Fnv1a h;
  h.field("tokens");
  for (const auto& t : tokens_) h.field(t);
  h.field("langs");
  for (const auto& l : languages_) h.field(l);
  return h.hex();
}

void Vocab::save(const std::filesystem::path& vocab_path,
                 const std::filesystem::path& langs_path) const {
  {
    std::ofstream out(vocab_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + vocab_path.string());
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  }
  std::ofstream out(langs_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + langs_path.string());
  for (std::size_t i = 0; i < languages_.size(); ++i) out << languages_[i] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::filesystem::path& vocab_path,
                  const std::filesystem::path& langs_path) {
  const auto rows = read_tsv(vocab_path);
  if (rows.size() < static_cast<std::size_t>(kNumSpecial)) {
    throw FormatError(vocab_path.string() + ": missing special tokens");
  }
  for (std::int32_t i = 0; i < kNumSpecial; ++i) {
    if (rows[static_cast<std::size_t>(i)].first != kSpecialTokens[static_cast<std::size_t>(i)]) {
      throw FormatError(vocab_path.string() + ": id " + std::to_string(i) + " must be " +
                        std::string(kSpecialTokens[static_cast<std::size_t>(i)]));
    }
  }
  std::vector<std::string> tokens;
  for (std::size_t i = kNumSpecial; i < rows.size(); ++i) tokens.push_back(rows[i].first);
  std::vector<std::string> langs;
  for (auto& [code, id] : read_tsv(langs_path)) langs.push_back(code);
  return Vocab(std::move(tokens), std::move(langs));
}

Vocab build_vocab(std::span<const std::vector<std::string>> tokenized, std::size_t min_count,
                  std::vector<std::string> languages) {
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : tokenized) {
    for (const auto& t : seq) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [t, c] : counts) {
    if (c < min_count) continue;
    if (std::find(Vocab::kSpecialTokens.begin(), Vocab::kSpecialTokens.end(), t) !=
        Vocab::kSpecialTokens.end()) {
      continue;
    }
    kept.emplace_back(t, c);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [t, c] : kept) tokens.push_back(std::move(t));
  return Vocab(std::move(tokens), std::move(languages));
}

}  // namespace btx::text
