#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace btx {

// FNV-1a, used for content fingerprints of corpora, vocabularies and models.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (const unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 1099511628211ULL;
    }
  }
  // Length-delimited so ("ab","c") and ("a","bc") hash differently.
  void field(std::string_view bytes) {
    update(std::to_string(bytes.size()));
    update(":");
    update(bytes);
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return buf;
  }

 private:
  std::uint64_t state_ = 14695981039346656037ULL;
};

}  // namespace btx
