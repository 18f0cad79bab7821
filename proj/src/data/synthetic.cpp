#include "btx/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "btx/core/errors.hpp"

namespace btx::data {

namespace {

std::string utf8_encode(char32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return s;
}

std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Two-character words over a block of CJK ideographs.
std::vector<std::string> source_words(std::size_t n, std::mt19937_64& rng) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < n) {
    const auto w = utf8_encode(0x4E00 + static_cast<char32_t>(draw(rng, 0, 1499))) +
                   utf8_encode(0x4E00 + static_cast<char32_t>(draw(rng, 0, 1499)));
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

// Two- or three-syllable Latin pseudo-words.
std::vector<std::string> target_words(std::size_t n, std::mt19937_64& rng) {
  static constexpr std::string_view kOnset = "bdfgklmnprstvz";
  static constexpr std::string_view kVowel = "aeiou";
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const std::size_t syl = draw(rng, 2, 3);
    for (std::size_t s = 0; s < syl; ++s) {
      w.push_back(kOnset[draw(rng, 0, kOnset.size() - 1)]);
      w.push_back(kVowel[draw(rng, 0, kVowel.size() - 1)]);
    }
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

std::string join(const std::vector<std::size_t>& ids, const std::vector<std::string>& words) {
  std::string s;
  for (const auto i : ids) {
    if (!s.empty()) s.push_back(' ');
    s += words[i];
  }
  return s;
}

bool contains(const std::vector<std::size_t>& title, const std::vector<std::size_t>& term) {
  return std::search(title.begin(), title.end(), term.begin(), term.end()) != title.end();
}

std::vector<std::vector<std::size_t>> make_titles(const SyntheticWorldConfig& c,
                                                  const std::vector<std::vector<std::size_t>>& terms,
                                                  std::size_t vocab, std::mt19937_64& rng) {
  const auto n_embed = static_cast<std::size_t>(
      std::llround(c.embed_fraction * static_cast<double>(c.num_titles)));
  std::vector<std::vector<std::size_t>> titles;
  titles.reserve(c.num_titles);
  for (std::size_t j = 0; j < c.num_titles; ++j) {
    const std::size_t len = draw(rng, c.title_min, c.title_max);
    // Round-robin assignment so every term gets embedded.
    const std::vector<std::size_t>* term = j < n_embed ? &terms[j % terms.size()] : nullptr;
    std::vector<std::size_t> t;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt == 1000) throw PreconditionError("synthetic world: cannot draw clean filler");
      t.clear();
      const std::size_t fill = len - (term ? term->size() : 0);
      for (std::size_t k = 0; k < fill; ++k) t.push_back(draw(rng, 0, vocab - 1));
      if (term) {
        const std::size_t at = draw(rng, 0, fill);
        t.insert(t.begin() + static_cast<std::ptrdiff_t>(at), term->begin(), term->end());
      }
      // Filler must not spell any term by accident, nor repeat the embedded one.
      const bool clean = std::none_of(terms.begin(), terms.end(), [&](const auto& other) {
        if (&other != term) return contains(t, other);
        return std::search(std::search(t.begin(), t.end(), other.begin(), other.end()) + 1,
                           t.end(), other.begin(), other.end()) != t.end();
      });
      if (clean) break;
    }
    titles.push_back(std::move(t));
  }
  std::shuffle(titles.begin(), titles.end(), rng);
  return titles;
}

}  // namespace

SyntheticWorld gen_synthetic_world(const SyntheticWorldConfig& c) {
  if (c.src_vocab == 0 || c.tgt_vocab == 0 || c.num_pairs == 0 || c.num_titles == 0 ||
      c.term_min == 0 || c.title_min == 0 || c.categories.empty()) {
    throw PreconditionError("synthetic world: counts must be positive");
  }
  if (c.src_vocab != c.tgt_vocab) {
    throw PreconditionError("synthetic world: word i must translate to word i, so src_vocab (" +
                            std::to_string(c.src_vocab) + ") must equal tgt_vocab (" +
                            std::to_string(c.tgt_vocab) + ")");
  }
  if (c.term_min > c.term_max || c.term_min < 2 || c.term_max > 5) {
    throw PreconditionError("synthetic world: term length range must lie within [2, 5]");
  }
  if (c.title_min > c.title_max) throw PreconditionError("synthetic world: bad title range");
  if (c.term_max > c.title_min) {
    throw PreconditionError("synthetic world: term length " + std::to_string(c.term_max) +
                            " exceeds minimum title length " + std::to_string(c.title_min));
  }
  if (c.embed_fraction < 0 || c.embed_fraction > 1) {
    throw PreconditionError("synthetic world: embed_fraction must be in [0, 1]");
  }
  const auto n_embed = static_cast<std::size_t>(
      std::llround(c.embed_fraction * static_cast<double>(c.num_titles)));
  if (n_embed > 0 && n_embed < c.num_pairs) {
    throw PreconditionError("synthetic world: " + std::to_string(n_embed) +
                            " embedding titles cannot cover " + std::to_string(c.num_pairs) +
                            " terms");
  }
  if (n_embed == c.num_titles && c.num_pairs == 1) {
    throw PreconditionError("synthetic world: a single term embedded everywhere leaves no negatives");
  }

  std::mt19937_64 rng(c.seed);
  SyntheticWorld world;
  world.src_words = source_words(c.src_vocab, rng);
  world.tgt_words = target_words(c.tgt_vocab, rng);

  std::vector<std::vector<std::size_t>> terms;
  std::set<std::vector<std::size_t>> seen;
  std::size_t attempts = 0;
  while (terms.size() < c.num_pairs) {
    if (++attempts > 1000 * c.num_pairs) {
      throw PreconditionError("synthetic world: cannot draw enough distinct terms");
    }
    std::vector<std::size_t> t(draw(rng, c.term_min, c.term_max));
    for (auto& w : t) w = draw(rng, 0, c.src_vocab - 1);
    // Nested terms would make one term's titles positives for another.
    const bool nested = std::any_of(terms.begin(), terms.end(), [&](const auto& other) {
      return contains(t, other) || contains(other, t);
    });
    if (!nested && seen.insert(t).second) terms.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < terms.size(); ++i) {
    world.pairs.push_back({join(terms[i], world.src_words), join(terms[i], world.tgt_words),
                           c.categories[i % c.categories.size()]});
  }

  const auto tgt = make_titles(c, terms, c.tgt_vocab, rng);
  const auto src = make_titles(c, terms, c.src_vocab, rng);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const bool has_negative = std::any_of(tgt.begin(), tgt.end(), [&](const auto& t) {
      return !contains(t, terms[i]);
    });
    if (!has_negative) {
      throw PreconditionError("synthetic world: term " + std::to_string(i) +
                              " occurs in every title");
    }
  }
  for (const auto& t : tgt) world.tgt_titles.push_back(join(t, world.tgt_words));
  for (const auto& t : src) world.src_titles.push_back(join(t, world.src_words));
  return world;
}

}  // namespace btx::data
