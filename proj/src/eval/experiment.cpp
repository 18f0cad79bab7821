#include "btx/eval/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <optional>
#include <thread>

#include "btx/core/errors.hpp"
#include "btx/io/checkpoint.hpp"

namespace btx::eval {

namespace {

std::vector<std::int32_t> encode_text(const std::string& text, const text::MergeTable& merges,
                                      const text::Vocab& vocab) {
  return vocab.encode(text::apply_bpe(text, merges));
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

text::Vocab build_vocab_for(std::span<const std::string> src_titles, std::span<const std::string> tgt_titles,
                            std::span<const data::TermPair> pairs, const text::MergeTable& merges,
                            std::size_t min_count, const std::vector<std::string>& languages) {
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(src_titles.size() + tgt_titles.size() + 2 * pairs.size());
  for (const auto& t : src_titles) tokenized.push_back(text::apply_bpe(t, merges));
  for (const auto& t : tgt_titles) tokenized.push_back(text::apply_bpe(t, merges));
  for (const auto& p : pairs) {
    tokenized.push_back(text::apply_bpe(p.src_term, merges));
    tokenized.push_back(text::apply_bpe(p.tgt_term, merges));
  }
  return text::build_vocab(tokenized, min_count, languages);
}

ExperimentData prepare_synthetic(const io::RunConfig& config) {
  ExperimentData d;
  auto world = data::gen_synthetic_world(io::world_config(config));
  d.pairs = std::move(world.pairs);
  d.src_titles = std::move(world.src_titles);
  d.tgt_titles = std::move(world.tgt_titles);
  std::vector<std::string> all = d.src_titles;
  all.insert(all.end(), d.tgt_titles.begin(), d.tgt_titles.end());
  d.merges = text::learn_bpe(all, config.size_value("data.bpe_merges"));
  const auto build = io::build_options(config);
  d.src_lang = build.src_lang;
  d.tgt_lang = build.tgt_lang;
  d.dataset = data::build_examples(d.pairs, d.src_titles, d.tgt_titles, d.merges, build);
  if (const auto n = config.size_value("data.max_train"); n > 0 && d.dataset.train.size() > n) {
    d.dataset.train.resize(n);
  }
  if (const auto n = config.size_value("data.max_test"); n > 0 && d.dataset.test.size() > n) {
    d.dataset.test.resize(n);
  }
  d.vocab = build_vocab_for(d.src_titles, d.tgt_titles, d.pairs, d.merges, config.size_value("data.min_count"),
                            config.list("data.languages"));
  return d;
}

model::PretrainCorpus pretrain_corpus(std::span<const std::string> src_titles,
                                      std::span<const std::string> tgt_titles,
                                      std::span<const data::TermPair> pairs,
                                      std::span<const data::LabeledExample> train,
                                      const text::MergeTable& merges, const text::Vocab& vocab,
                                      const std::string& src_lang, const std::string& tgt_lang,
                                      std::size_t max_len) {
  const auto sl = static_cast<std::int32_t>(vocab.lang_id(src_lang));
  const auto tl = static_cast<std::int32_t>(vocab.lang_id(tgt_lang));
  model::PretrainCorpus c;
  auto mono = [&](const std::string& title, std::int32_t lang) {
    const auto ids = encode_text(title, merges, vocab);
    if (!ids.empty() && ids.size() + 2 <= max_len) c.mono.push_back(model::make_mono_input(ids, lang, max_len));
  };
  auto parallel = [&](const std::vector<std::int32_t>& s, const std::vector<std::int32_t>& t) {
    if (!s.empty() && !t.empty() && s.size() + t.size() + 3 <= max_len) {
      c.parallel.push_back(model::make_tlm_pair(s, t, sl, tl, max_len));
    }
  };
  for (const auto& t : src_titles) mono(t, sl);
  for (const auto& t : tgt_titles) mono(t, tl);
  for (const auto& p : pairs) parallel(encode_text(p.src_term, merges, vocab), encode_text(p.tgt_term, merges, vocab));
  for (const auto& ex : train) {
    if (ex.polarity == data::Polarity::positive) {
      parallel(vocab.encode(ex.src_term_tokens), vocab.encode(ex.tgt_sentence_tokens));
    }
  }
  return c;
}

ParamStore<float> init_extractor_params(const model::EncoderConfig& enc, const model::ExtractorConfig& cfg,
                                        std::uint64_t seed, const ParamStore<float>* init,
                                        const model::EncoderConfig* init_cfg) {
  ParamStore<float> store;
  std::mt19937_64 rng(seed);
  model::Encoder<float>::add_params(store, enc, rng);
  model::Extractor<float>::add_head_params(store, enc, cfg, rng);
  if (init != nullptr) io::copy_encoder_params(*init, init_cfg ? *init_cfg : enc, store, enc);
  return store;
}

std::string TrendCell::name() const {
  std::string n = std::string(model::mode_name(mode)) + "/" + init;
  if (!with_source) n += "/nosrc";
  if (train_size > 0) n += "/n=" + std::to_string(train_size);
  return n;
}

std::vector<TrendCell> make_grid(const std::vector<std::string>& inits,
                                 const std::vector<model::ExtractorMode>& modes,
                                 const std::vector<bool>& sources, const std::vector<std::size_t>& sizes) {
  std::vector<TrendCell> grid;
  const std::vector<std::size_t> all_sizes = sizes.empty() ? std::vector<std::size_t>{0} : sizes;
  for (const auto& init : inits) {
    if (init != "rand" && init != "mlm" && init != "tlm") {
      throw PreconditionError("unknown init '" + init + "' (expected rand, mlm or tlm)");
    }
  }
  for (const auto size : all_sizes)
    for (const auto mode : modes)
      for (const auto& init : inits)
        for (const bool src : sources) {
          if (!src && mode != model::ExtractorMode::concat) continue;
          grid.push_back(TrendCell{init, mode, src, size});
        }
  return grid;
}

const TrendSummary* TrendReport::find(const TrendCell& cell) const {
  for (const auto& s : summaries) {
    if (s.cell == cell) return &s;
  }
  return nullptr;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

TrendRun run_cell(const ExperimentData& data, const TrendOptions& opt, const model::EncoderConfig& enc,
                  const TrendCell& cell, std::uint64_t seed, const ParamStore<float>* init) {
  TrendRun r{cell, seed, false, {}, {}, 0.0};
  const auto t0 = std::chrono::steady_clock::now();
  try {
    model::ExtractorConfig cfg;
    cfg.mode = cell.mode;
    cfg.drop_source = !cell.with_source;
    auto store = init_extractor_params(enc, cfg, seed, init);
    const auto& train = data.dataset.train;
    const std::size_t n = cell.train_size == 0 ? train.size() : std::min(cell.train_size, train.size());
    std::vector<model::ExtractorInput> inputs;
    inputs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      inputs.push_back(model::make_extractor_input(train[i], data.vocab, cfg, opt.max_len));
    }
    auto topt = opt.train;
    topt.seed = seed;
    model::train_extractor(store, enc, cfg, inputs, topt);
    const model::Extractor<float> m(enc, cfg, store);
    r.report = evaluate(m, data.dataset.test, data.vocab, opt.max_len);
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

void add_contrast(TrendReport& rep, const std::string& name, const TrendCell& lhs, const TrendCell& rhs,
                  bool strict) {
  const auto* a = rep.find(lhs);
  const auto* b = rep.find(rhs);
  if (a == nullptr || b == nullptr) return;
  TrendContrast c;
  c.name = name;
  c.lhs = lhs.name();
  c.rhs = rhs.name();
  c.lhs_median = a->median_precision;
  c.rhs_median = b->median_precision;
  c.difference = c.lhs_median - c.rhs_median;
  c.strict = strict;
  c.holds = a->ok() && b->ok() && (strict ? c.lhs_median > c.rhs_median : c.lhs_median >= c.rhs_median);
  rep.contrasts.push_back(c);
}

}  // namespace

TrendReport run_trend_suite(const ExperimentData& data, const TrendOptions& options,
                            std::span<const std::uint64_t> seeds) {
  if (options.grid.empty()) throw PreconditionError("trend suite: empty grid");
  if (seeds.empty()) throw PreconditionError("trend suite: no seeds");
  auto enc = options.encoder;
  enc.vocab_size = data.vocab.size();
  enc.n_langs = data.vocab.n_langs();
  enc.validate();
  const bool need_tlm = std::any_of(options.grid.begin(), options.grid.end(),
                                    [](const TrendCell& c) { return c.init == "tlm"; });
  const bool need_mlm = need_tlm || std::any_of(options.grid.begin(), options.grid.end(),
                                                [](const TrendCell& c) { return c.init == "mlm"; });
  auto say = [&](const std::string& s) {
    if (options.progress) options.progress(s);
  };

  std::optional<model::PretrainCorpus> corpus;
  if (need_mlm) {
    corpus = pretrain_corpus(data.src_titles, data.tgt_titles, data.pairs, data.dataset.train, data.merges,
                             data.vocab, data.src_lang, data.tgt_lang, options.max_len);
  }

  TrendReport rep;
  for (const auto seed : seeds) {
    std::optional<ParamStore<float>> mlm, tlm;
    std::string mlm_error, tlm_error;
    if (need_mlm) {
      try {
        ParamStore<float> store;
        std::mt19937_64 rng(seed);
        model::Encoder<float>::add_params(store, enc, rng);
        auto popt = options.pretrain;
        popt.objective = "mlm";
        popt.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        const auto log = model::pretrain(store, enc, *corpus, popt);
        say("seed " + std::to_string(seed) + " mlm pretrain: final loss " + pct(log.back().loss) + ", " +
            pct(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + "s");
        mlm = std::move(store);
      } catch (const std::exception& e) {
        mlm_error = std::string("mlm pretraining failed: ") + e.what();
        tlm_error = mlm_error;
      }
    }
    if (need_tlm && mlm) {
      try {
        auto store = io::clone_params(*mlm);
        auto popt = options.pretrain;
        popt.objective = "tlm";
        popt.seed = seed + 1000003;
        const auto t0 = std::chrono::steady_clock::now();
        const auto log = model::pretrain(store, enc, *corpus, popt);
        say("seed " + std::to_string(seed) + " tlm pretrain: final loss " + pct(log.back().loss) + ", " +
            pct(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + "s");
        tlm = std::move(store);
      } catch (const std::exception& e) {
        tlm_error = std::string("tlm pretraining failed: ") + e.what();
      }
    }

    std::vector<TrendRun> runs(options.grid.size());
    auto work = [&](std::size_t i) {
      const auto& cell = options.grid[i];
      const ParamStore<float>* init = nullptr;
      if (cell.init == "mlm" || cell.init == "tlm") {
        const auto& src = cell.init == "mlm" ? mlm : tlm;
        if (!src) {
          runs[i] = TrendRun{cell, seed, true, cell.init == "mlm" ? mlm_error : tlm_error, {}, 0.0};
          return;
        }
        init = &*src;
      }
      runs[i] = run_cell(data, options, enc, cell, seed, init);
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, options.grid.size()));
    if (jobs == 1) {
      for (std::size_t i = 0; i < runs.size(); ++i) {
        work(i);
        const auto& r = runs[i];
        say("seed " + std::to_string(seed) + " " + r.cell.name() + ": " +
            (r.failed ? "FAILED " + r.error : pct(r.report.precision) + "%") + " (" + pct(r.seconds) + "s)");
      }
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < jobs; ++t) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < runs.size(); i = next++) work(i);
        });
      }
      for (auto& th : pool) th.join();
    }
    rep.runs.insert(rep.runs.end(), runs.begin(), runs.end());
  }

  for (const auto& cell : options.grid) {
    TrendSummary s;
    s.cell = cell;
    for (const auto& r : rep.runs) {
      if (!(r.cell == cell)) continue;
      if (r.failed) {
        ++s.failures;
      } else {
        s.precisions.push_back(r.report.precision);
        s.negative_accuracies.push_back(r.report.negative.percent());
      }
    }
    s.median_precision = median(s.precisions);
    s.median_negative = median(s.negative_accuracies);
    rep.summaries.push_back(std::move(s));
  }

  for (const auto& cell : options.grid) {
    const std::string mode(model::mode_name(cell.mode));
    if (cell.init == "tlm") {
      auto other = cell;
      other.init = "mlm";
      add_contrast(rep, "tlm >= mlm [" + mode + "]", cell, other, false);
    }
    if (cell.init == "mlm") {
      auto other = cell;
      other.init = "rand";
      add_contrast(rep, "mlm >= rand [" + mode + "]", cell, other, false);
    }
    if (cell.mode == model::ExtractorMode::concat && cell.with_source) {
      auto other = cell;
      other.mode = model::ExtractorMode::attn;
      add_contrast(rep, "concat >= attn [" + cell.init + "]", cell, other, false);
      other = cell;
      other.with_source = false;
      add_contrast(rep, "with source > without [" + cell.init + "]", cell, other, true);
    }
  }
  return rep;
}

TrendOptions trend_options(const io::RunConfig& config) {
  TrendOptions o;
  o.encoder = io::encoder_config(config, 0, 0);
  o.pretrain = io::pretrain_options(config);
  o.train = io::train_options(config);
  o.max_len = config.size_value("data.max_len");
  o.jobs = config.size_value("trend.jobs");
  std::vector<model::ExtractorMode> modes;
  for (const auto& m : config.list("trend.modes")) modes.push_back(model::parse_mode(m));
  std::vector<bool> sources;
  for (const auto& s : config.list("trend.sources")) {
    if (s != "with" && s != "without") throw PreconditionError("trend.sources items must be with or without");
    sources.push_back(s == "with");
  }
  std::vector<std::size_t> sizes;
  for (const auto& s : config.list("trend.sizes")) {
    std::size_t used = 0;
    std::size_t v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw PreconditionError("trend.sizes: bad size '" + s + "'");
    sizes.push_back(v);
  }
  o.grid = make_grid(config.list("trend.inits"), modes, sources, sizes);
  return o;
}

std::string format_trend_report(const TrendReport& report) {
  std::string out;
  for (const auto& r : report.runs) {
    out += "run\t" + r.cell.name() + "\tseed=" + std::to_string(r.seed) + "\t" +
           (r.failed ? "failed=" + r.error : "precision=" + pct(r.report.precision) +
                                                  "\tnegative=" + pct(r.report.negative.percent())) +
           "\n";
  }
  for (const auto& s : report.summaries) {
    out += "median\t" + s.cell.name() + "\tprecision=" + (s.ok() ? pct(s.median_precision) : "nan") +
           "\tnegative=" + (s.ok() ? pct(s.median_negative) : "nan") + "\truns=" +
           std::to_string(s.precisions.size()) + "\tfailures=" + std::to_string(s.failures) + "\n";
  }
  for (const auto& c : report.contrasts) {
    out += "contrast\t" + c.name + "\t" + c.lhs + "=" + pct(c.lhs_median) + "\t" + c.rhs + "=" +
           pct(c.rhs_median) + "\tdiff=" + pct(c.difference) + "\tholds=" + (c.holds ? "yes" : "no") + "\n";
  }
  return out;
}

}  // namespace btx::eval
