#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "btx/core/errors.hpp"
#include "btx/eval/experiment.hpp"
#include "btx/io/checkpoint.hpp"
#include "btx/io/run_config.hpp"

using namespace btx;
using namespace btx::io;

namespace {

model::EncoderConfig tiny() {
  model::EncoderConfig c;
  c.d = 8;
  c.d_ff = 16;
  c.layers = 2;
  c.heads = 2;
  c.max_positions = 32;
  c.vocab_size = 20;
  c.n_langs = 3;
  c.dropout = 0.1;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("btx_test_" + name);
}

model::ExtractorInput concat_input() {
  model::ExtractorInput in;
  auto l = model::build_concat_input(std::vector<std::int32_t>{5, 6}, std::vector<std::int32_t>{7, 8, 9, 10}, 0,
                                     1, false, 32);
  in.target = l.input;
  in.tgt_begin = l.tgt_offset;
  in.tgt_len = 4;
  return in;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("run config profiles, overrides and rejection") {
  auto desk = RunConfig::profile("desk");
  CHECK(desk.size_value("model.d") == 128);
  CHECK(desk.size_value("model.layers") == 4);
  CHECK(desk.size_value("model.heads") == 4);
  CHECK(desk.size_value("train.batch_size") == 32);
  CHECK(desk.size_value("data.max_len") == 64);
  CHECK(desk.size_value("data.bpe_merges") == 8000);
  const auto paper = RunConfig::profile("paper");
  CHECK(paper.size_value("model.d") == 1024);
  CHECK(paper.size_value("model.d_ff") == 4096);
  CHECK(paper.size_value("model.layers") == 6);
  CHECK(paper.size_value("model.heads") == 8);
  CHECK(paper.size_value("train.batch_size") == 128);
  CHECK(paper.size_value("data.max_len") == 100);
  CHECK(paper.real("train.lr") == 1e-4);
  CHECK(paper.size_value("train.warmup") == 4000);
  CHECK(paper.real("model.dropout") == 0.1);
  CHECK_THROWS_AS(RunConfig::profile("laptop"), PreconditionError);

  CHECK_THROWS_WITH_AS(desk.merge(nlohmann::json{{"model.depth", 3}}), doctest::Contains("model.depth"),
                       PreconditionError);
  CHECK_THROWS_AS(desk.merge(nlohmann::json{{"model.d", "wide"}}), PreconditionError);
  CHECK_THROWS_AS(desk.merge(nlohmann::json{{"model.d", -4}}), PreconditionError);
  CHECK_THROWS_AS(desk.merge(nlohmann::json{{"model.tie_span_heads", 1}}), PreconditionError);
  CHECK_THROWS_AS(desk.merge(nlohmann::json::array()), PreconditionError);
  desk.merge(nlohmann::json{{"model.d", 64}, {"train.lr", 1}, {"model.extractor", "attn"}});
  CHECK(desk.size_value("model.d") == 64);
  CHECK(desk.real("train.lr") == 1.0);
  desk.set("seed", "11");
  desk.set("model.tie_span_heads", "true");
  CHECK(desk.u64("seed") == 11);
  CHECK(desk.flag("model.tie_span_heads"));
  CHECK_THROWS_AS(desk.set("seed", "-1"), PreconditionError);
  CHECK_THROWS_AS(desk.set("seed", "7x"), PreconditionError);
  CHECK_THROWS_AS(desk.set("nope", "1"), PreconditionError);

  const auto path = temp_path("cfg.json");
  {
    std::ofstream(path) << R"({"model.layers": 2, "data.world_titles": 500})";
  }
  desk.merge_file(path);
  CHECK(desk.size_value("model.layers") == 2);
  const auto dumped = nlohmann::json::parse(desk.dump());
  CHECK(dumped.at("profile") == "desk");
  CHECK(dumped.at("model.layers") == 2);
  CHECK(dumped.at("seed") == 11);
  // The resolved dump is itself a valid override file.
  auto again = RunConfig::profile("desk");
  again.merge(dumped);
  CHECK(again.dump() == desk.dump());
  {
    std::ofstream(path) << R"({"bogus.key": 1})";
  }
  CHECK_THROWS_AS(desk.merge_file(path), PreconditionError);
  std::filesystem::remove(path);

  const auto e = encoder_config(desk, 50, 3);
  CHECK(e.d == 64);
  CHECK(e.vocab_size == 50);
  CHECK(extractor_config(desk).mode == model::ExtractorMode::attn);
  desk.set("model.no_source_term", "true");
  CHECK_THROWS_AS(extractor_config(desk), PreconditionError);
}

TEST_CASE("checkpoint round trip is bit-exact and byte-identical") {
  const auto enc = tiny();
  model::ExtractorConfig cfg;
  auto store = eval::init_extractor_params(enc, cfg, 3);
  std::mt19937_64 rng(4);
  store.for_each([&](Parameter<float>& p) {
    for (auto& v : p.value.values()) v += static_cast<float>(std::normal_distribution<double>(0, 0.3)(rng));
  });
  CheckpointMeta meta;
  meta.kind = "extractor";
  meta.encoder = enc;
  meta.extractor = cfg;
  meta.vocab_fingerprint = "0123456789abcdef";
  meta.languages = {"zh", "en", "fr"};
  meta.max_len = 32;

  const auto path = temp_path("model.btx");
  save_checkpoint(store, meta, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.meta == meta);
  REQUIRE(loaded.params.names() == store.names());
  for (std::size_t i = 0; i < store.size(); ++i) CHECK(same_bits(loaded.params.at(i).value, store.at(i).value));
  const std::string bytes = serialize_checkpoint(store, meta);
  CHECK(serialize_checkpoint(loaded.params, loaded.meta) == bytes);
  CHECK(bytes.rfind("BTXE1\nheader_bytes ", 0) == 0);

  auto copy = clone_params(loaded.params);
  const model::Extractor<float> a(enc, cfg, store), b(enc, cfg, copy);
  const auto in = concat_input();
  Tape<float> t1(false), t2(false);
  CHECK(same_bits(t1.value(a.forward(t1, {&in, 1}, model::RunMode{}).start_logits),
                  t2.value(b.forward(t2, {&in, 1}, model::RunMode{}).start_logits)));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint load errors name the byte offset") {
  const auto enc = tiny();
  auto store = eval::init_extractor_params(enc, model::ExtractorConfig{}, 5);
  CheckpointMeta meta;
  meta.encoder = enc;
  const std::string bytes = serialize_checkpoint(store, meta);

  const std::string cut = bytes.substr(0, bytes.size() - 1);
  const std::string where = "byte " + std::to_string(cut.size());
  CHECK_THROWS_WITH_AS(parse_checkpoint(cut), doctest::Contains(where.c_str()),
                       FormatError);
  CHECK_THROWS_WITH_AS(parse_checkpoint("BTXE2\n" + bytes.substr(6)), doctest::Contains("byte 0"), FormatError);
  CHECK_THROWS_WITH_AS(parse_checkpoint(bytes + "x"), doctest::Contains("trailing"), FormatError);
  CHECK_THROWS_WITH_AS(parse_checkpoint(bytes.substr(0, 40)), doctest::Contains("byte"), FormatError);
  std::string bad_json = bytes;
  bad_json[bytes.find('{')] = '[';
  CHECK_THROWS_WITH_AS(parse_checkpoint(bad_json), doctest::Contains("checkpoint byte"), FormatError);

  meta.vocab_fingerprint = "aaaa";
  const std::string fp = serialize_checkpoint(store, meta);
  LoadOptions strict;
  strict.expect_vocab_fingerprint = "bbbb";
  CHECK_THROWS_AS(parse_checkpoint(fp, strict), PreconditionError);
  strict.allow_fingerprint_mismatch = true;
  CHECK(parse_checkpoint(fp, strict).meta.vocab_fingerprint == "aaaa");

  store.at(0).value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(serialize_checkpoint(store, meta), NumericError);
}

TEST_CASE("pre-trained checkpoint initialises a concat model: encoder copied, heads fresh") {
  const auto enc = tiny();
  ParamStore<float> pre;
  std::mt19937_64 rng(6);
  model::Encoder<float>::add_params(pre, enc, rng);
  model::MlmHead<float>::add_params(pre, enc);
  pre.for_each([&](Parameter<float>& p) {
    for (auto& v : p.value.values()) v += 0.5f;
  });
  CheckpointMeta meta;
  meta.encoder = enc;
  const auto ck = parse_checkpoint(serialize_checkpoint(pre, meta));

  model::ExtractorConfig cfg;
  const auto fresh = eval::init_extractor_params(enc, cfg, 9);
  const auto init = eval::init_extractor_params(enc, cfg, 9, &ck.params, &ck.meta.encoder);
  CHECK_FALSE(init.contains("mlm.out_bias"));
  const auto enc_names = model::Encoder<float>::param_names(enc);
  for (const auto& n : init.names()) {
    const bool is_enc = std::find(enc_names.begin(), enc_names.end(), n) != enc_names.end();
    if (is_enc) {
      CHECK_MESSAGE(same_bits(init.get(n).value, pre.get(n).value), n);
    } else {
      CHECK_MESSAGE(same_bits(init.get(n).value, fresh.get(n).value), n);
    }
  }
  auto other = enc;
  other.layers = 1;
  CHECK_THROWS_AS(eval::init_extractor_params(other, cfg, 9, &ck.params, &ck.meta.encoder), PreconditionError);
}
