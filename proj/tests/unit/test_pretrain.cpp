#include <doctest.h>

#include <cmath>

#include "btx/core/errors.hpp"
#include "btx/core/grad_check.hpp"
#include "btx/model/pretrain.hpp"
#include "btx/text/vocab.hpp"
#include "model_oracle.hpp"

using namespace btx;
using namespace btx::model;
using btx::text::Vocab;

namespace {

EncoderConfig tiny(std::size_t vocab = 20) {
  EncoderConfig c;
  c.d = 8;
  c.d_ff = 16;
  c.layers = 1;
  c.heads = 2;
  c.max_positions = 32;
  c.vocab_size = vocab;
  c.n_langs = 3;
  c.dropout = 0.0;
  return c;
}

std::vector<std::int32_t> random_ids(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int32_t> d(Vocab::kNumSpecial, static_cast<std::int32_t>(vocab) - 1);
  std::vector<std::int32_t> ids(n);
  for (auto& i : ids) i = d(rng);
  return ids;
}

}  // namespace

TEST_CASE("mask_tokens: select_prob 0 is the identity") {
  std::mt19937_64 rng(1);
  const auto ids = random_ids(50, 100, rng);
  MaskingPolicy p;
  p.select_prob = 0.0;
  const auto m = mask_tokens(ids, p, 100, rng);
  CHECK(m.corrupted == ids);
  CHECK(m.label_positions.empty());
  CHECK(m.label_ids.empty());
}

TEST_CASE("mask_tokens: 15% selection and 80/10/10 split over 100k eligible tokens") {
  std::mt19937_64 rng(2);
  const std::size_t vocab = 500;
  const auto ids = random_ids(100000, vocab, rng);
  const auto m = mask_tokens(ids, MaskingPolicy{}, vocab, rng);
  const double selected = static_cast<double>(m.label_positions.size());
  std::size_t masked = 0, random = 0, kept = 0;
  for (std::size_t k = 0; k < m.label_positions.size(); ++k) {
    const auto pos = m.label_positions[k];
    CHECK(m.label_ids[k] == ids[pos]);
    const auto c = m.corrupted[pos];
    if (c == Vocab::kMask) {
      ++masked;
    } else if (c == ids[pos]) {
      ++kept;  // a random draw equal to the original also lands here
    } else {
      CHECK_FALSE(Vocab::is_special(c));
      ++random;
    }
  }
  CHECK(std::abs(selected / 100000.0 - 0.15) <= 0.01);
  CHECK(std::abs(masked / selected - 0.8) <= 0.02);
  CHECK(std::abs(random / selected - 0.1) <= 0.02);
  CHECK(std::abs(kept / selected - 0.1) <= 0.02);
}

TEST_CASE("mask_tokens: fixed seed is deterministic") {
  std::mt19937_64 data(3);
  const auto ids = random_ids(300, 60, data);
  std::mt19937_64 a(9), b(9);
  const auto x = mask_tokens(ids, MaskingPolicy{}, 60, a);
  const auto y = mask_tokens(ids, MaskingPolicy{}, 60, b);
  CHECK(x.corrupted == y.corrupted);
  CHECK(x.label_positions == y.label_positions);
  CHECK(x.label_ids == y.label_ids);
}

TEST_CASE("mask_tokens: separators and padding are never touched over 1e5 maskings") {
  std::mt19937_64 rng(4);
  std::vector<std::int32_t> ids = {Vocab::kSep, 10, 11, Vocab::kSep, 12, Vocab::kSep, Vocab::kPad, Vocab::kPad};
  MaskingPolicy p;
  p.select_prob = 0.9;
  std::size_t labels = 0;
  for (int trial = 0; trial < 100000; ++trial) {
    const auto m = mask_tokens(ids, p, 40, rng);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == Vocab::kSep || ids[i] == Vocab::kPad) CHECK(m.corrupted[i] == ids[i]);
    }
    for (const auto pos : m.label_positions) {
      CHECK(ids[pos] != Vocab::kSep);
      CHECK(ids[pos] != Vocab::kPad);
    }
    labels += m.label_positions.size();
  }
  CHECK(labels > 0);
}

TEST_CASE("masking policy validation") {
  MaskingPolicy p;
  p.keep_frac = 0.2;
  CHECK_THROWS_AS(p.validate(), PreconditionError);
  p = {};
  p.select_prob = 1.5;
  CHECK_THROWS_AS(p.validate(), PreconditionError);
}

TEST_CASE("make_tlm_pair: layout, positions, languages and errors") {
  const std::vector<std::int32_t> src = {10, 11}, tgt = {20, 21, 22};
  const auto in = make_tlm_pair(src, tgt, 0, 1, 64);
  CHECK(in.size() == src.size() + tgt.size() + 3);
  CHECK(in.token_ids == std::vector<std::int32_t>{0, 10, 11, 0, 20, 21, 22, 0});
  CHECK(in.position_ids == std::vector<std::int32_t>{0, 1, 2, 0, 1, 2, 3, 4});
  CHECK(in.language_ids == std::vector<std::int32_t>{0, 0, 0, 1, 1, 1, 1, 1});
  CHECK(in.segment_starts == std::vector<std::size_t>{0, 3});
  CHECK_THROWS_AS(make_tlm_pair(src, std::vector<std::int32_t>{}, 0, 1, 64), PreconditionError);
  try {
    make_tlm_pair(src, tgt, 0, 1, 7);
    FAIL("expected overlength error");
  } catch (const PreconditionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2 + 3") != std::string::npos);
    CHECK(msg.find("max_len 7") != std::string::npos);
  }
}

TEST_CASE("mlm loss: no labels skips, uniform logits give ln V") {
  const auto cfg = tiny(20);
  ParamStore<double> store;
  std::mt19937_64 rng(5);
  Encoder<double>::add_params(store, cfg, rng);
  MlmHead<double>::add_params(store, cfg);
  const Encoder<double> enc(cfg, store);
  const MlmHead<double> head(cfg, store);
  MlmExample ex{make_mono_input(std::vector<std::int32_t>{5, 6, 7}, 1, 32), {}, {}};
  Tape<double> tape;
  CHECK_FALSE(head.loss(tape, enc, {&ex, 1}, RunMode{}).has_value());

  store.get("encoder.embed.token").value.fill(0.0);
  ex.label_positions = {2};
  ex.label_ids = {6};
  const auto loss = head.loss(tape, enc, {&ex, 1}, RunMode{});
  REQUIRE(loss.has_value());
  CHECK(tape.value(*loss)[0] == doctest::Approx(std::log(20.0)).epsilon(1e-12));
}

TEST_CASE("mlm loss: tiny model matches a float64 oracle") {
  const auto cfg = tiny(20);
  ParamStore<double> store;
  std::mt19937_64 rng(6);
  Encoder<double>::add_params(store, cfg, rng);
  MlmHead<double>::add_params(store, cfg);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto& v : store.at(i).value.values()) v += std::normal_distribution<double>(0, 0.2)(rng);
  const Encoder<double> enc(cfg, store);
  const MlmHead<double> head(cfg, store);
  std::vector<MlmExample> batch;
  MaskingPolicy p;
  p.select_prob = 0.5;
  for (int b = 0; b < 3; ++b) {
    const auto in = make_mono_input(random_ids(4 + b, 20, rng), b % 2, 32);
    auto ex = corrupt(in, p, 20, rng);
    if (ex.label_positions.empty()) {
      ex.label_positions = {1};
      ex.label_ids = {in.token_ids[1]};
    }
    batch.push_back(ex);
  }
  Tape<double> tape(false);
  const double got = tape.value(*head.loss(tape, enc, batch, RunMode{}))[0];

  const auto emb = testutil::to_mat(store.get("encoder.embed.token").value);
  const auto bias = testutil::to_vec(store.get("mlm.out_bias").value);
  long double total = 0;
  std::size_t count = 0;
  for (const auto& ex : batch) {
    const auto h = oracle::forward(store, cfg, ex.input);
    for (std::size_t k = 0; k < ex.label_positions.size(); ++k) {
      std::vector<oracle::Real> logits(cfg.vocab_size);
      for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        logits[v] = bias[v];
        for (std::size_t j = 0; j < cfg.d; ++j) logits[v] += h[ex.label_positions[k]][j] * emb[v][j];
      }
      total -= std::log(oracle::softmax(logits)[static_cast<std::size_t>(ex.label_ids[k])]);
      ++count;
    }
  }
  CHECK(std::abs(got - static_cast<double>(total / count)) < 1e-10);
}

TEST_CASE("mlm loss gradients match finite differences") {
  const auto cfg = tiny(20);
  ParamStore<double> store;
  std::mt19937_64 rng(7);
  Encoder<double>::add_params(store, cfg, rng);
  MlmHead<double>::add_params(store, cfg);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto& v : store.at(i).value.values()) v += std::normal_distribution<double>(0, 0.3)(rng);
  const Encoder<double> enc(cfg, store);
  const MlmHead<double> head(cfg, store);
  MlmExample ex{make_tlm_pair(std::vector<std::int32_t>{5, 6}, std::vector<std::int32_t>{7, 8, 9}, 0, 1, 32), {2, 5}, {6, 8}};
  ex.input.token_ids[2] = Vocab::kMask;
  const auto r = grad_check([&](Tape<double>& t) { return *head.loss(t, enc, {&ex, 1}, RunMode{}); }, store);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("mlm loss of an untrained model is near ln V") {
  EncoderConfig cfg = tiny(300);
  cfg.d = 32;
  cfg.d_ff = 64;
  cfg.layers = 2;
  cfg.heads = 4;
  ParamStore<float> store;
  std::mt19937_64 rng(8);
  Encoder<float>::add_params(store, cfg, rng);
  MlmHead<float>::add_params(store, cfg);
  const Encoder<float> enc(cfg, store);
  const MlmHead<float> head(cfg, store);
  std::vector<MlmExample> batch;
  for (int b = 0; b < 32; ++b)
    batch.push_back(corrupt(make_mono_input(random_ids(12, 300, rng), 0, 32), MaskingPolicy{}, 300, rng));
  Tape<float> tape(false);
  const double loss = tape.value(*head.loss(tape, enc, batch, RunMode{}))[0];
  CHECK(std::abs(loss - std::log(300.0)) / std::log(300.0) < 0.1);
}

TEST_CASE("pretrain: deterministic, skips unlabelled batches") {
  auto cfg = tiny(30);
  PretrainCorpus corpus;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) corpus.mono.push_back(make_mono_input(random_ids(6, 30, rng), i % 2, 32));
  PretrainOptions o;
  o.steps = 5;
  o.batch_size = 4;
  auto run = [&](const PretrainOptions& opts) {
    ParamStore<float> store;
    std::mt19937_64 init(1);
    Encoder<float>::add_params(store, cfg, init);
    const auto log = pretrain(store, cfg, corpus, opts);
    return std::make_pair(log, store.get("encoder.layer0.ffn.w1").value);
  };
  const auto [la, wa] = run(o);
  const auto [lb, wb] = run(o);
  REQUIRE(la.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(la[i].loss == lb[i].loss);
  CHECK(wa == wb);

  o.masking.select_prob = 0.0;
  const auto [lc, wc] = run(o);
  for (const auto& s : lc) CHECK(s.skipped);
}
