#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "btx/data/corpus.hpp"
#include "btx/data/synthetic.hpp"
#include "btx/model/extractor.hpp"
#include "btx/model/pretrain.hpp"

namespace btx::io {

// Flat hyperparameter set keyed model.*, train.*, pretrain.*, data.*,
// mask.*, trend.* and seed. Every key has a typed default from the profile;
// overrides must use a known key and the same type.
class RunConfig {
 public:
  // "desk" or "paper".
  static RunConfig profile(std::string_view name);
  static std::vector<std::string> profile_names();

  // Throws PreconditionError on unknown keys, type mismatches or a
  // non-object document.
  void merge(const nlohmann::json& overrides);
  void merge_file(const std::filesystem::path& path);
  // Parses `value` according to the key's type (for command-line flags).
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.contains(key); }
  std::size_t size_value(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string str(const std::string& key) const;
  // Comma-separated string key split into its non-empty items.
  std::vector<std::string> list(const std::string& key) const;

  const std::string& profile_name() const { return profile_; }
  // The resolved configuration, keys sorted, with the profile name.
  std::string dump() const;
  void write(const std::filesystem::path& path) const;

 private:
  const nlohmann::json& at(const std::string& key) const;
  std::string profile_;
  nlohmann::json values_;  // sorted object
};

// Not validated here; vocab_size may be filled in later.
model::EncoderConfig encoder_config(const RunConfig& c, std::size_t vocab_size, std::size_t n_langs);
model::ExtractorConfig extractor_config(const RunConfig& c);
model::TrainOptions train_options(const RunConfig& c);
model::PretrainOptions pretrain_options(const RunConfig& c);
model::MaskingPolicy masking_policy(const RunConfig& c);
data::BuildOptions build_options(const RunConfig& c);
data::SyntheticWorldConfig world_config(const RunConfig& c);

}  // namespace btx::io
