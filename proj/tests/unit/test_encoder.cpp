#include <doctest.h>

#include <numeric>

#include "btx/core/errors.hpp"
#include "btx/model/encoder.hpp"
#include "test_util.hpp"

using namespace btx;
using namespace btx::model;

namespace {

EncoderConfig small_config(std::size_t layers = 2) {
  EncoderConfig c;
  c.d = 8;
  c.d_ff = 16;
  c.layers = layers;
  c.heads = 2;
  c.max_positions = 32;
  c.vocab_size = 30;
  c.n_langs = 3;
  c.dropout = 0.0;
  return c;
}

SegmentedInput random_input(std::size_t n, std::mt19937_64& rng, const EncoderConfig& c) {
  std::uniform_int_distribution<std::int32_t> tok(0, static_cast<std::int32_t>(c.vocab_size) - 1);
  std::uniform_int_distribution<std::int32_t> lang(0, static_cast<std::int32_t>(c.n_langs) - 1);
  SegmentedInput in;
  for (std::size_t i = 0; i < n; ++i) {
    in.token_ids.push_back(tok(rng));
    in.position_ids.push_back(static_cast<std::int32_t>(i));
    in.language_ids.push_back(lang(rng));
    in.padding.push_back(0);
  }
  return in;
}

template <typename T>
Tensor<T> run(const Encoder<T>& enc, const SegmentedInput& in, AttentionTrace<T>* trace = nullptr) {
  Tape<T> tape(false);
  const auto batch = PackedBatch::pack(in);
  return tape.value(enc.forward(tape, batch, RunMode{}, trace));
}

oracle::Mat rows_of(const Tensor<double>& table, const std::vector<std::int32_t>& ids) {
  const auto m = testutil::to_mat(table);
  oracle::Mat out;
  for (const auto i : ids) out.push_back(m[static_cast<std::size_t>(i)]);
  return out;
}

oracle::Mat add(oracle::Mat a, const oracle::Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

}  // namespace

TEST_CASE("embed: zero tables give a zero matrix") {
  const auto cfg = small_config();
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  Encoder<double>::add_params(store, cfg, rng);
  for (const char* n : {"encoder.embed.token", "encoder.embed.position", "encoder.embed.language"})
    store.get(n).value.fill(0.0);
  const Encoder<double> enc(cfg, store);
  Tape<double> tape(false);
  const auto in = random_input(5, rng, cfg);
  const auto& x = tape.value(enc.embed(tape, PackedBatch::pack(in), RunMode{}));
  CHECK(x.shape() == Shape{5, 8});
  for (const double v : x.values()) CHECK(v == 0.0);
}

TEST_CASE("embed: single token is the sum of its three table rows") {
  const auto cfg = small_config();
  ParamStore<double> store;
  std::mt19937_64 rng(2);
  Encoder<double>::add_params(store, cfg, rng);
  for (std::size_t j = 0; j < 8; ++j) {
    store.get("encoder.embed.token").value(7, j) = 1.0 + j;
    store.get("encoder.embed.position").value(3, j) = 10.0 * j;
    store.get("encoder.embed.language").value(1, j) = -0.5;
  }
  const Encoder<double> enc(cfg, store);
  SegmentedInput in{{7}, {3}, {1}, {0}, {}};
  Tape<double> tape(false);
  const auto& x = tape.value(enc.embed(tape, PackedBatch::pack(in), RunMode{}));
  for (std::size_t j = 0; j < 8; ++j) CHECK(x(0, j) == doctest::Approx(1.0 + j + 10.0 * j - 0.5));
}

TEST_CASE("embed: changing language ids shifts by the language row difference") {
  const auto cfg = small_config();
  ParamStore<double> store;
  std::mt19937_64 rng(3);
  Encoder<double>::add_params(store, cfg, rng);
  const Encoder<double> enc(cfg, store);
  auto a = random_input(6, rng, cfg);
  auto b = a;
  for (auto& l : a.language_ids) l = 0;
  for (auto& l : b.language_ids) l = 2;
  Tape<double> tape(false);
  const auto& xa = tape.value(enc.embed(tape, PackedBatch::pack(a), RunMode{}));
  const auto& xb = tape.value(enc.embed(tape, PackedBatch::pack(b), RunMode{}));
  const auto& lang = store.get("encoder.embed.language").value;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(xb(i, j) - xa(i, j) == doctest::Approx(lang(2, j) - lang(0, j)).epsilon(1e-12));
}

TEST_CASE("embed: out-of-range ids name the table") {
  const auto cfg = small_config();
  ParamStore<double> store;
  std::mt19937_64 rng(4);
  Encoder<double>::add_params(store, cfg, rng);
  const Encoder<double> enc(cfg, store);
  Tape<double> tape(false);
  SegmentedInput bad_tok{{99}, {0}, {0}, {0}, {}};
  SegmentedInput bad_pos{{1}, {40}, {0}, {0}, {}};
  SegmentedInput bad_lang{{1}, {0}, {5}, {0}, {}};
  auto msg = [&](const SegmentedInput& in) {
    try {
      enc.embed(tape, PackedBatch::pack(in), RunMode{});
    } catch (const IndexError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(msg(bad_tok).find("token embedding") != std::string::npos);
  CHECK(msg(bad_pos).find("position embedding") != std::string::npos);
  CHECK(msg(bad_lang).find("language embedding") != std::string::npos);
  CHECK_THROWS_AS(bad_lang.validate(cfg), IndexError);
}

TEST_CASE("encode: zero layers is the identity") {
  const auto cfg = small_config(0);
  ParamStore<double> store;
  std::mt19937_64 rng(5);
  Encoder<double>::add_params(store, cfg, rng);
  const Encoder<double> enc(cfg, store);
  const auto in = random_input(4, rng, cfg);
  Tape<double> tape(false);
  const auto batch = PackedBatch::pack(in);
  const Var x = enc.embed(tape, batch, RunMode{});
  CHECK(tape.value(enc.encode(tape, x, batch, RunMode{})) == tape.value(x));
}

TEST_CASE("encode: one layer matches the oracle composition") {
  const auto cfg = small_config(1);
  ParamStore<double> store;
  std::mt19937_64 rng(6);
  Encoder<double>::add_params(store, cfg, rng);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    for (auto& v : p.value.values()) v += std::normal_distribution<double>(0, 0.3)(rng);
  }
  const Encoder<double> enc(cfg, store);
  const auto in = random_input(5, rng, cfg);
  const auto out = run(enc, in);

  auto P = [&](const char* n) { return store.get(std::string("encoder.layer0.") + n).value; };
  oracle::Mat x = add(add(rows_of(store.get("encoder.embed.token").value, in.token_ids),
                          rows_of(store.get("encoder.embed.position").value, in.position_ids)),
                      rows_of(store.get("encoder.embed.language").value, in.language_ids));
  oracle::AttnWeights w{testutil::to_mat(P("attn.wq")), testutil::to_mat(P("attn.wk")),
                        testutil::to_mat(P("attn.wv")), testutil::to_mat(P("attn.wo")),
                        testutil::to_vec(P("attn.bq")), testutil::to_vec(P("attn.bk")),
                        testutil::to_vec(P("attn.bv")), testutil::to_vec(P("attn.bo"))};
  x = oracle::layer_norm(add(x, oracle::attention(x, x, x, w, {}, cfg.heads)),
                         testutil::to_vec(P("ln1.gamma")), testutil::to_vec(P("ln1.beta")), 1e-5L);
  x = oracle::layer_norm(add(x, oracle::ffn(x, testutil::to_mat(P("ffn.w1")), testutil::to_vec(P("ffn.b1")),
                                            testutil::to_mat(P("ffn.w2")), testutil::to_vec(P("ffn.b2")))),
                         testutil::to_vec(P("ln2.gamma")), testutil::to_vec(P("ln2.beta")), 1e-5L);
  CHECK(testutil::max_abs_diff(out, x) < 1e-10);
}

TEST_CASE("encode: appended padding leaves original outputs unchanged (10 seeds)") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto cfg = small_config(2);
    ParamStore<float> store;
    std::mt19937_64 rng(100 + seed);
    Encoder<float>::add_params(store, cfg, rng);
    for (std::size_t i = 0; i < store.size(); ++i)
      for (auto& v : store.at(i).value.values()) v += std::normal_distribution<float>(0, 0.3f)(rng);
    const Encoder<float> enc(cfg, store);
    const std::size_t n = 3 + seed % 7;
    const auto in = random_input(n, rng, cfg);
    auto padded = in;
    padded.pad_to(n + 1 + seed % 5, 2);
    const auto a = run(enc, in);
    const auto b = run(enc, padded);
    double worst = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < cfg.d; ++j) worst = std::max(worst, double(std::abs(a(i, j) - b(i, j))));
    CHECK(worst < 1e-6);

    // Packing with another sequence must not leak either.
    const std::vector<SegmentedInput> two = {random_input(4, rng, cfg), in};
    Tape<float> tape(false);
    const auto batch = PackedBatch::pack(two);
    const auto& both = tape.value(enc.forward(tape, batch, RunMode{}));
    worst = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < cfg.d; ++j) worst = std::max(worst, double(std::abs(a(i, j) - both(4 + i, j))));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("encode: permuting tokens with their positions permutes outputs") {
  const auto cfg = small_config(2);
  ParamStore<double> store;
  std::mt19937_64 rng(7);
  Encoder<double>::add_params(store, cfg, rng);
  const Encoder<double> enc(cfg, store);
  const auto in = random_input(7, rng, cfg);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  SegmentedInput p = in;
  for (std::size_t i = 0; i < 7; ++i) {
    p.token_ids[i] = in.token_ids[perm[i]];
    p.position_ids[i] = in.position_ids[perm[i]];
    p.language_ids[i] = in.language_ids[perm[i]];
  }
  const auto a = run(enc, in);
  const auto b = run(enc, p);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < cfg.d; ++j) CHECK(b(i, j) == doctest::Approx(a(perm[i], j)).epsilon(1e-10));
}

TEST_CASE("encode: trace rows sum to one and non-finite weights name the layer") {
  const auto cfg = small_config(2);
  ParamStore<double> store;
  std::mt19937_64 rng(8);
  Encoder<double>::add_params(store, cfg, rng);
  const Encoder<double> enc(cfg, store);
  const auto in = random_input(5, rng, cfg);
  AttentionTrace<double> trace;
  const auto out = run(enc, in, &trace);
  CHECK(out.shape() == Shape{5, cfg.d});
  REQUIRE(trace.size() == 2);
  REQUIRE(trace[1].size() == 1);
  CHECK(trace[1][0].shape() == Shape{2, 5, 5});
  for (std::size_t r = 0; r < 10; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += trace[1][0][r * 5 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  store.get("encoder.layer1.ffn.w1").value[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    run(enc, in);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("config validation and parameter binding") {
  auto c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), PreconditionError);
  ParamStore<float> store;
  std::mt19937_64 rng(9);
  Encoder<float>::add_params(store, small_config(), rng);
  auto bigger = small_config();
  bigger.vocab_size = 31;
  CHECK_THROWS_AS(Encoder<float>(bigger, store), DimensionError);
  CHECK(store.names() == Encoder<float>::param_names(small_config()));
}

TEST_CASE("full-scale config (1024, 4096, 6 layers, 8 heads) runs one forward") {
  EncoderConfig c;
  c.d = 1024;
  c.d_ff = 4096;
  c.layers = 6;
  c.heads = 8;
  c.max_positions = 100;
  c.vocab_size = 64;
  c.n_langs = 3;
  c.dropout = 0.1;
  ParamStore<float> store;
  std::mt19937_64 rng(10);
  Encoder<float>::add_params(store, c, rng);
  const Encoder<float> enc(c, store);
  const auto in = random_input(6, rng, c);
  const auto out = run(enc, in);
  CHECK(out.shape() == Shape{6, 1024});
  CHECK(out.all_finite());
}
