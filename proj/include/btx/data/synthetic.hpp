#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "btx/data/corpus.hpp"

namespace btx::data {

// A two-language toy world. Source word i translates to target word i, terms
// are n-grams translated word by word, and titles are random word sequences
// of which a fraction embed one term verbatim.
struct SyntheticWorldConfig {
  std::size_t src_vocab = 200;
  std::size_t tgt_vocab = 200;
  std::size_t num_pairs = 50;
  std::size_t term_min = 2;
  std::size_t term_max = 5;
  std::size_t title_min = 6;
  std::size_t title_max = 14;
  std::size_t num_titles = 6000;
  double embed_fraction = 0.6;
  std::vector<std::string> categories = {"t-shirt", "dress", "phone"};
  std::uint64_t seed = 7;
};

struct SyntheticWorld {
  std::vector<TermPair> pairs;
  std::vector<std::string> src_titles;
  std::vector<std::string> tgt_titles;
  std::vector<std::string> src_words;
  std::vector<std::string> tgt_words;
};

// Throws PreconditionError on infeasible configs.
SyntheticWorld gen_synthetic_world(const SyntheticWorldConfig& config);

}  // namespace btx::data
