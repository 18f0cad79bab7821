#include "btx/io/run_config.hpp"

#include <fstream>
#include <sstream>

#include "btx/core/errors.hpp"

namespace btx::io {

namespace {

using nlohmann::json;

json desk_defaults() {
  return json{
      {"seed", 7},
      {"model.d", 128},
      {"model.d_ff", 512},
      {"model.layers", 4},
      {"model.heads", 4},
      {"model.max_positions", 128},
      {"model.dropout", 0.1},
      {"model.extractor", "concat"},
      {"model.tie_span_heads", false},
      {"model.no_source_term", false},
      {"train.steps", 1000},
      {"train.batch_size", 32},
      {"train.lr", 1e-3},
      {"train.warmup", 100},
      {"train.clip_norm", 0.0},
      {"train.beta1", 0.9},
      {"train.beta2", 0.999},
      {"train.eps", 1e-8},
      {"pretrain.objective", "mlm"},
      {"pretrain.steps", 2000},
      {"pretrain.batch_size", 32},
      {"pretrain.lr", 1e-3},
      {"pretrain.warmup", 200},
      {"data.max_len", 64},
      {"data.bpe_merges", 8000},
      {"data.min_count", 1},
      {"data.neg_ratio", 1.0},
      {"data.hard_negatives", false},
      {"data.train_frac", 0.8},
      {"data.valid_frac", 0.1},
      {"data.src_lang", "zh"},
      {"data.tgt_lang", "en"},
      {"data.languages", "zh,en,fr"},
      {"data.max_train", 0},
      {"data.max_test", 0},
      {"data.world_src_vocab", 200},
      {"data.world_tgt_vocab", 200},
      {"data.world_pairs", 50},
      {"data.world_term_min", 2},
      {"data.world_term_max", 5},
      {"data.world_title_min", 6},
      {"data.world_title_max", 14},
      {"data.world_titles", 6000},
      {"data.world_embed_fraction", 0.6},
      {"data.world_categories", "t-shirt,dress,phone"},
      {"mask.select_prob", 0.15},
      {"mask.mask_frac", 0.8},
      {"mask.random_frac", 0.1},
      {"mask.keep_frac", 0.1},
      {"trend.inits", "rand,mlm,tlm"},
      {"trend.modes", "attn,concat"},
      {"trend.sources", "with,without"},
      {"trend.sizes", ""},
      {"trend.seeds", "1,2,3"},
      {"trend.jobs", 1},
  };
}

json paper_overrides() {
  return json{
      {"model.d", 1024},       {"model.d_ff", 4096},   {"model.layers", 6},
      {"model.heads", 8},      {"model.max_positions", 128},
      {"train.batch_size", 128}, {"train.lr", 1e-4},  {"train.warmup", 4000},
      {"pretrain.batch_size", 128}, {"pretrain.lr", 1e-4}, {"pretrain.warmup", 4000},
      {"data.max_len", 100},
  };
}

bool same_kind(const json& a, const json& b) {
  if (a.is_boolean() || b.is_boolean()) return a.is_boolean() && b.is_boolean();
  if (a.is_string() || b.is_string()) return a.is_string() && b.is_string();
  if (a.is_number_float()) return b.is_number();
  if (a.is_number_integer()) return b.is_number_unsigned() || (b.is_number_integer() && b.get<long long>() >= 0);
  return false;
}

std::string kind_name(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_string()) return "string";
  if (v.is_number_float()) return "number";
  return "non-negative integer";
}

}  // namespace

RunConfig RunConfig::profile(std::string_view name) {
  RunConfig c;
  c.values_ = desk_defaults();
  if (name == "paper") {
    const auto overrides = paper_overrides();
    for (const auto& [k, v] : overrides.items()) c.values_[k] = v;
  } else if (name != "desk") {
    throw PreconditionError("unknown profile '" + std::string(name) + "' (expected desk or paper)");
  }
  c.profile_ = std::string(name);
  return c;
}

std::vector<std::string> RunConfig::profile_names() { return {"desk", "paper"}; }

void RunConfig::merge(const json& overrides) {
  if (!overrides.is_object()) throw PreconditionError("config must be a JSON object of flat keys");
  for (const auto& [k, v] : overrides.items()) {
    if (k == "profile") continue;
    if (!values_.contains(k)) throw PreconditionError("unknown config key: " + k);
    const auto& cur = values_.at(k);
    if (!same_kind(cur, v)) {
      throw PreconditionError("config key " + k + " expects a " + kind_name(cur));
    }
    values_[k] = cur.is_number_float() ? json(v.get<double>()) : v;
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw PreconditionError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  merge(doc);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& cur = at(key);
  json v;
  try {
    if (cur.is_boolean()) {
      if (value != "true" && value != "false") throw std::invalid_argument(value);
      v = value == "true";
    } else if (cur.is_string()) {
      v = value;
    } else {
      std::size_t used = 0;
      if (cur.is_number_float()) {
        v = std::stod(value, &used);
      } else {
        if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
        v = static_cast<std::uint64_t>(std::stoull(value, &used));
      }
      if (used != value.size()) throw std::invalid_argument(value);
    }
  } catch (const std::exception&) {
    throw PreconditionError("config key " + key + " expects a " + kind_name(cur) + ", got '" + value + "'");
  }
  values_[key] = v;
}

const json& RunConfig::at(const std::string& key) const {
  if (!values_.contains(key)) throw PreconditionError("unknown config key: " + key);
  return values_.at(key);
}

std::size_t RunConfig::size_value(const std::string& key) const { return at(key).get<std::size_t>(); }
std::uint64_t RunConfig::u64(const std::string& key) const { return at(key).get<std::uint64_t>(); }
double RunConfig::real(const std::string& key) const { return at(key).get<double>(); }
bool RunConfig::flag(const std::string& key) const { return at(key).get<bool>(); }
std::string RunConfig::str(const std::string& key) const { return at(key).get<std::string>(); }

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::dump() const {
  json doc = values_;
  doc["profile"] = profile_;
  return doc.dump(2) + "\n";
}

void RunConfig::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << dump();
}

model::EncoderConfig encoder_config(const RunConfig& c, std::size_t vocab_size, std::size_t n_langs) {
  model::EncoderConfig e;
  e.d = c.size_value("model.d");
  e.d_ff = c.size_value("model.d_ff");
  e.layers = c.size_value("model.layers");
  e.heads = c.size_value("model.heads");
  e.max_positions = c.size_value("model.max_positions");
  e.dropout = c.real("model.dropout");
  e.vocab_size = vocab_size;
  e.n_langs = n_langs;
  return e;
}

model::ExtractorConfig extractor_config(const RunConfig& c) {
  model::ExtractorConfig e;
  e.mode = model::parse_mode(c.str("model.extractor"));
  e.tie_span_heads = c.flag("model.tie_span_heads");
  e.drop_source = c.flag("model.no_source_term");
  if (e.drop_source && e.mode != model::ExtractorMode::concat) {
    throw PreconditionError("model.no_source_term needs the concat extractor");
  }
  return e;
}

namespace {

AdamConfig adam(const RunConfig& c, const std::string& prefix) {
  AdamConfig a;
  a.base_lr = c.real(prefix + ".lr");
  a.warmup_steps = c.size_value(prefix + ".warmup");
  a.beta1 = c.real("train.beta1");
  a.beta2 = c.real("train.beta2");
  a.eps = c.real("train.eps");
  a.clip_norm = c.real("train.clip_norm");
  return a;
}

}  // namespace

model::TrainOptions train_options(const RunConfig& c) {
  model::TrainOptions o;
  o.steps = c.size_value("train.steps");
  o.batch_size = c.size_value("train.batch_size");
  o.adam = adam(c, "train");
  o.seed = c.u64("seed");
  return o;
}

model::MaskingPolicy masking_policy(const RunConfig& c) {
  model::MaskingPolicy m;
  m.select_prob = c.real("mask.select_prob");
  m.mask_frac = c.real("mask.mask_frac");
  m.random_frac = c.real("mask.random_frac");
  m.keep_frac = c.real("mask.keep_frac");
  m.validate();
  return m;
}

model::PretrainOptions pretrain_options(const RunConfig& c) {
  model::PretrainOptions o;
  o.objective = c.str("pretrain.objective");
  if (o.objective != "mlm" && o.objective != "tlm") {
    throw PreconditionError("pretrain.objective must be mlm or tlm, got " + o.objective);
  }
  o.steps = c.size_value("pretrain.steps");
  o.batch_size = c.size_value("pretrain.batch_size");
  o.adam = adam(c, "pretrain");
  o.masking = masking_policy(c);
  o.seed = c.u64("seed");
  return o;
}

data::BuildOptions build_options(const RunConfig& c) {
  data::BuildOptions b;
  b.neg_ratio = c.real("data.neg_ratio");
  b.max_len = c.size_value("data.max_len");
  b.seed = c.u64("seed");
  b.hard_negatives = c.flag("data.hard_negatives");
  b.train_frac = c.real("data.train_frac");
  b.valid_frac = c.real("data.valid_frac");
  b.src_lang = c.str("data.src_lang");
  b.tgt_lang = c.str("data.tgt_lang");
  return b;
}

data::SyntheticWorldConfig world_config(const RunConfig& c) {
  data::SyntheticWorldConfig w;
  w.src_vocab = c.size_value("data.world_src_vocab");
  w.tgt_vocab = c.size_value("data.world_tgt_vocab");
  w.num_pairs = c.size_value("data.world_pairs");
  w.term_min = c.size_value("data.world_term_min");
  w.term_max = c.size_value("data.world_term_max");
  w.title_min = c.size_value("data.world_title_min");
  w.title_max = c.size_value("data.world_title_max");
  w.num_titles = c.size_value("data.world_titles");
  w.embed_fraction = c.real("data.world_embed_fraction");
  w.categories = c.list("data.world_categories");
  w.seed = c.u64("seed");
  return w;
}

}  // namespace btx::io
