#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace btx::text {

// Shared token table for all languages plus the language id table.
// Special tokens hold the lowest ids.
class Vocab {
 public:
  static constexpr std::int32_t kSep = 0;
  static constexpr std::int32_t kMask = 1;
  static constexpr std::int32_t kPad = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kNumSpecial = 4;
  static constexpr std::array<std::string_view, kNumSpecial> kSpecialTokens = {
      "[/s]", "[MASK]", "[PAD]", "[UNK]"};

  // Specials only, default languages zh=0, en=1, fr=2.
  Vocab();
  // `tokens` follow the specials in the given order. Throws on duplicates or
  // on a special token appearing among them.
  explicit Vocab(std::vector<std::string> tokens,
                 std::vector<std::string> languages = default_languages());

  static std::vector<std::string> default_languages() { return {"zh", "en", "fr"}; }

  std::size_t size() const { return tokens_.size(); }
  // [UNK] for unknown tokens.
  std::int32_t id(std::string_view token) const;
  std::optional<std::int32_t> find(std::string_view token) const;
  // Throws IndexError on an out-of-range id.
  const std::string& token(std::int32_t id) const;
  static bool is_special(std::int32_t id) { return id >= 0 && id < kNumSpecial; }

  std::vector<std::int32_t> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const std::int32_t> ids) const;

  const std::vector<std::string>& languages() const { return languages_; }
  std::size_t n_langs() const { return languages_.size(); }
  // Throws PreconditionError naming the code when unknown.
  std::int32_t lang_id(std::string_view code) const;
  std::int32_t add_language(const std::string& code);

  // Hash over tokens in id order and the language table.
  std::string fingerprint() const;

  // "token<TAB>id" per line; languages in a sibling "code<TAB>id" file.
  void save(const std::filesystem::path& vocab_path,
            const std::filesystem::path& langs_path) const;
  static Vocab load(const std::filesystem::path& vocab_path,
                    const std::filesystem::path& langs_path);

  bool operator==(const Vocab& other) const {
    return tokens_ == other.tokens_ && languages_ == other.languages_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::string> languages_;
};

// Every token with count >= min_count, ordered by count descending then
// lexicographically.
Vocab build_vocab(std::span<const std::vector<std::string>> tokenized, std::size_t min_count,
                  std::vector<std::string> languages = Vocab::default_languages());

}  // namespace btx::text
