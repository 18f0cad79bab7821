// btx: command-line pipeline for bilingual terminology extraction.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "btx/core/errors.hpp"
#include "btx/data/corpus.hpp"
#include "btx/data/synthetic.hpp"
#include "btx/eval/attention.hpp"
#include "btx/eval/experiment.hpp"
#include "btx/eval/metrics.hpp"
#include "btx/io/checkpoint.hpp"
#include "btx/io/run_config.hpp"
#include "btx/model/extractor.hpp"
#include "btx/model/pretrain.hpp"
#include "btx/text/bpe.hpp"
#include "btx/text/vocab.hpp"

namespace fs = std::filesystem;
using namespace btx;

namespace {

// Bad flags or configuration: exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::string profile = "desk";
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Flags {
  Common common;
  // data
  std::string pairs, src_titles, tgt_titles, bpe, merges, vocab, langs, manifest;
  std::vector<std::string> inputs;
  std::string train_data, data;
  // model
  std::string extractor, objective, init = "rand", model;
  bool no_source = false, tie_heads = false, per_head = false, allow_mismatch = false;
  std::string term, sentence, src_lang, tgt_lang;
  std::size_t index = 0, layer = 0;
  std::string seeds;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* app, Common& c, bool needs_out) {
  app->add_option("--config", c.config_path, "JSON file of flat config overrides")->check(CLI::ExistingFile);
  app->add_option("--profile", c.profile, "Base profile")->check(CLI::IsMember({"desk", "paper"}));
  app->add_option("--seed", c.seed, "Random seed (overrides the config)");
  auto* out = app->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
}

io::RunConfig resolve(const Flags& f) {
  try {
    auto cfg = io::RunConfig::profile(f.common.profile);
    if (!f.common.config_path.empty()) cfg.merge_file(f.common.config_path);
    if (f.common.seed) cfg.set("seed", std::to_string(*f.common.seed));
    if (!f.extractor.empty()) cfg.set("model.extractor", f.extractor);
    if (!f.objective.empty()) cfg.set("pretrain.objective", f.objective);
    if (f.no_source) cfg.set("model.no_source_term", "true");
    if (f.tie_heads) cfg.set("model.tie_span_heads", "true");
    if (f.jobs) cfg.set("trend.jobs", std::to_string(*f.jobs));
    io::extractor_config(cfg);
    io::masking_policy(cfg);
    return cfg;
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
}

fs::path prepare_out(const Flags& f, const io::RunConfig& cfg) {
  const fs::path out(f.common.out);
  fs::create_directories(out);
  cfg.write(out / "config.resolved.json");
  return out;
}

void write_metrics(const fs::path& path, const std::vector<model::StepLog>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "step,loss,lr,skipped,kind\n";
  char buf[128];
  for (const auto& s : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%d,", s.step, s.loss, s.lr, s.skipped ? 1 : 0);
    out << buf << s.kind << "\n";
  }
}

text::Vocab load_vocab(const Flags& f) {
  const fs::path v(f.vocab);
  const fs::path langs = f.langs.empty() ? v.parent_path() / "langs.tsv" : fs::path(f.langs);
  return text::Vocab::load(v, langs);
}

io::CheckpointMeta meta_for(const std::string& kind, const model::EncoderConfig& enc,
                            std::optional<model::ExtractorConfig> ex, const text::Vocab& vocab,
                            std::size_t max_len) {
  io::CheckpointMeta m;
  m.kind = kind;
  m.encoder = enc;
  m.extractor = ex;
  m.vocab_fingerprint = vocab.fingerprint();
  m.languages = vocab.languages();
  m.max_len = max_len;
  return m;
}

io::Checkpoint load_model(const std::string& path, const text::Vocab& vocab, bool allow_mismatch) {
  io::LoadOptions lo;
  lo.expect_vocab_fingerprint = vocab.fingerprint();
  lo.allow_fingerprint_mismatch = allow_mismatch;
  return io::load_checkpoint(path, lo);
}

model::Extractor<float> extractor_from(io::Checkpoint& ck) {
  if (ck.meta.kind != "extractor" || !ck.meta.extractor) {
    throw PreconditionError("checkpoint is a " + ck.meta.kind + " model, not an extractor");
  }
  return model::Extractor<float>(ck.meta.encoder, *ck.meta.extractor, ck.params);
}

// "path<TAB>lang" lines; relative paths resolve against the manifest.
std::vector<std::pair<fs::path, std::string>> read_manifest(const fs::path& path) {
  std::vector<std::pair<fs::path, std::string>> out;
  std::size_t lineno = 0;
  for (const auto& line : data::read_lines(path)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(path.string() + " line " + std::to_string(lineno) + ": expected path<TAB>lang");
    }
    fs::path p = line.substr(0, tab);
    if (p.is_relative()) p = path.parent_path() / p;
    out.emplace_back(p, line.substr(tab + 1));
  }
  if (out.empty()) throw FormatError(path.string() + ": empty manifest");
  return out;
}

int cmd_gen_synthetic(const Flags& f) {
  const auto cfg = resolve(f);
  const auto out = prepare_out(f, cfg);
  const auto world = data::gen_synthetic_world(io::world_config(cfg));
  data::write_term_pairs(out / "pairs.tsv", world.pairs);
  data::write_lines(out / "src_titles.txt", world.src_titles);
  data::write_lines(out / "tgt_titles.txt", world.tgt_titles);
  std::ofstream(out / "manifest.tsv") << "src_titles.txt\t" << cfg.str("data.src_lang") << "\n"
                                      << "tgt_titles.txt\t" << cfg.str("data.tgt_lang") << "\n";
  std::cout << "pairs=" << world.pairs.size() << " src_titles=" << world.src_titles.size()
            << " tgt_titles=" << world.tgt_titles.size() << "\n";
  return 0;
}

int cmd_learn_bpe(const Flags& f) {
  const auto cfg = resolve(f);
  const auto out = prepare_out(f, cfg);
  std::vector<std::string> lines;
  for (const auto& in : f.inputs) {
    const auto l = data::read_lines(in);
    lines.insert(lines.end(), l.begin(), l.end());
  }
  const auto merges = text::learn_bpe(lines, cfg.size_value("data.bpe_merges"));
  merges.save(out / "merges.txt");
  std::vector<data::TermPair> pairs;
  if (!f.pairs.empty()) pairs = data::read_term_pairs(f.pairs);
  const auto vocab = eval::build_vocab_for(lines, {}, pairs, merges, cfg.size_value("data.min_count"),
                                           cfg.list("data.languages"));
  vocab.save(out / "vocab.tsv", out / "langs.tsv");
  std::cout << "merges=" << merges.size() << " vocab=" << vocab.size() << "\n";
  return 0;
}

int cmd_build_corpus(const Flags& f) {
  const auto cfg = resolve(f);
  const auto out = prepare_out(f, cfg);
  const auto pairs = data::read_term_pairs(f.pairs);
  const auto src = data::read_lines(f.src_titles);
  const auto tgt = data::read_lines(f.tgt_titles);
  text::MergeTable merges;
  if (f.bpe.empty()) {
    std::vector<std::string> all = src;
    all.insert(all.end(), tgt.begin(), tgt.end());
    merges = text::learn_bpe(all, cfg.size_value("data.bpe_merges"));
  } else {
    merges = text::MergeTable::load(f.bpe);
  }
  merges.save(out / "merges.txt");
  auto ds = data::build_examples(pairs, src, tgt, merges, io::build_options(cfg));
  if (const auto n = cfg.size_value("data.max_train"); n > 0 && ds.train.size() > n) ds.train.resize(n);
  if (const auto n = cfg.size_value("data.max_test"); n > 0 && ds.test.size() > n) ds.test.resize(n);
  data::write_jsonl(out / "train.jsonl", ds.train);
  data::write_jsonl(out / "valid.jsonl", ds.valid);
  data::write_jsonl(out / "test.jsonl", ds.test);
  const auto& s = ds.stats;
  std::ostringstream stats;
  stats << "positives=" << s.positives << "\nnegatives=" << s.negatives
        << "\nterms_without_positives=" << s.terms_without_positives << "\nboundary_drops=" << s.boundary_drops
        << "\noverlength_drops=" << s.overlength_drops << "\nlong_terms=" << s.long_terms
        << "\nnegative_shortfall=" << s.negative_shortfall << "\nduplicate_titles=" << s.duplicate_titles
        << "\nsrc_title_hits=" << s.src_title_hits << "\ntrain=" << ds.train.size()
        << "\nvalid=" << ds.valid.size() << "\ntest=" << ds.test.size() << "\n";
  std::ofstream(out / "stats.txt") << stats.str();
  std::cout << stats.str();
  return 0;
}

int cmd_pretrain(const Flags& f) {
  const auto cfg = resolve(f);
  const auto out = prepare_out(f, cfg);
  const auto merges = text::MergeTable::load(f.merges);
  const auto vocab = load_vocab(f);
  const std::size_t max_len = cfg.size_value("data.max_len");
  std::vector<std::string> src, tgt;
  const std::string sl = cfg.str("data.src_lang"), tl = cfg.str("data.tgt_lang");
  model::PretrainCorpus corpus;
  for (const auto& [path, lang] : read_manifest(f.manifest)) {
    const auto lid = static_cast<std::int32_t>(vocab.lang_id(lang));
    for (const auto& line : data::read_lines(path)) {
      const auto ids = vocab.encode(text::apply_bpe(line, merges));
      if (!ids.empty() && ids.size() + 2 <= max_len) corpus.mono.push_back(model::make_mono_input(ids, lid, max_len));
    }
  }
  std::vector<data::TermPair> pairs;
  if (!f.pairs.empty()) pairs = data::read_term_pairs(f.pairs);
  std::vector<data::LabeledExample> train;
  if (!f.train_data.empty()) train = data::read_jsonl(f.train_data);
  const auto parallel = eval::pretrain_corpus({}, {}, pairs, train, merges, vocab, sl, tl, max_len);
  corpus.parallel = parallel.parallel;

  const auto enc = io::encoder_config(cfg, vocab.size(), vocab.n_langs());
  enc.validate();
  ParamStore<float> store;
  if (f.init == "rand") {
    std::mt19937_64 rng(cfg.u64("seed"));
    model::Encoder<float>::add_params(store, enc, rng);
  } else {
    auto ck = load_model(f.init, vocab, f.allow_mismatch);
    if (ck.meta.kind != "pretrain") throw PreconditionError("--init for pretrain needs a pretrain checkpoint");
    auto a = ck.meta.encoder, b = enc;
    a.dropout = b.dropout = 0;
    if (!(a == b)) throw PreconditionError("--init checkpoint encoder config does not match the run config");
    store = std::move(ck.params);
  }
  const auto opts = io::pretrain_options(cfg);
  std::ofstream progress(out / "progress.log");
  const auto log = model::pretrain(store, enc, corpus, opts, [&](const model::StepLog& s) {
    if (s.step % 100 == 0) progress << "step " << s.step << " loss " << s.loss << "\n" << std::flush;
  });
  write_metrics(out / "metrics.csv", log);
  io::save_checkpoint(store, meta_for("pretrain", enc, std::nullopt, vocab, max_len), out / "model.btx");
  std::cout << "objective=" << opts.objective << " steps=" << log.size()
            << " final_loss=" << (log.empty() ? 0.0 : log.back().loss) << "\n";
  return 0;
}

int cmd_train(const Flags& f) {
  const auto cfg = resolve(f);
  const auto out = prepare_out(f, cfg);
  const auto vocab = load_vocab(f);
  const std::size_t max_len = cfg.size_value("data.max_len");
  const auto enc = io::encoder_config(cfg, vocab.size(), vocab.n_langs());
  enc.validate();
  const auto ecfg = io::extractor_config(cfg);
  std::optional<io::Checkpoint> init;
  if (f.init != "rand") init = load_model(f.init, vocab, f.allow_mismatch);
  auto store = eval::init_extractor_params(enc, ecfg, cfg.u64("seed"), init ? &init->params : nullptr,
                                           init ? &init->meta.encoder : nullptr);
  const auto examples = data::read_jsonl(f.train_data);
  std::vector<model::ExtractorInput> inputs;
  inputs.reserve(examples.size());
  for (const auto& ex : examples) inputs.push_back(model::make_extractor_input(ex, vocab, ecfg, max_len));
  std::ofstream progress(out / "progress.log");
  const auto log = model::train_extractor(store, enc, ecfg, inputs, io::train_options(cfg), [&](const model::StepLog& s) {
    if (s.step % 100 == 0) progress << "step " << s.step << " loss " << s.loss << "\n" << std::flush;
  });
  write_metrics(out / "metrics.csv", log);
  io::save_checkpoint(store, meta_for("extractor", enc, ecfg, vocab, max_len), out / "model.btx");
  std::cout << "extractor=" << model::mode_name(ecfg.mode) << " steps=" << log.size()
            << " final_loss=" << (log.empty() ? 0.0 : log.back().loss) << "\n";
  return 0;
}

int cmd_eval(const Flags& f) {
  const auto cfg = resolve(f);
  const auto vocab = load_vocab(f);
  auto ck = load_model(f.model, vocab, f.allow_mismatch);
  const auto model = extractor_from(ck);
  const auto examples = data::read_jsonl(f.data);
  const auto report = eval::evaluate(model, examples, vocab, ck.meta.max_len);
  if (!f.common.out.empty()) {
    const auto out = prepare_out(f, cfg);
    eval::write_report(out / "report.txt", report);
  }
  std::cout << eval::format_report(report);
  return 0;
}

int cmd_extract(const Flags& f) {
  resolve(f);
  const auto vocab = load_vocab(f);
  const auto merges = text::MergeTable::load(f.merges);
  auto ck = load_model(f.model, vocab, f.allow_mismatch);
  const auto model = extractor_from(ck);
  const std::string sl = f.src_lang.empty() ? vocab.languages().at(0) : f.src_lang;
  const std::string tl = f.tgt_lang.empty() ? vocab.languages().at(1) : f.tgt_lang;
  const auto span = model::extract(f.term, f.sentence, model, merges, vocab, sl, tl, ck.meta.max_len);
  std::cout << (span ? *span : std::string("NONE")) << "\n";
  return 0;
}

int cmd_export_attention(const Flags& f) {
  const auto cfg = resolve(f);
  const auto out = prepare_out(f, cfg);
  const auto vocab = load_vocab(f);
  auto ck = load_model(f.model, vocab, f.allow_mismatch);
  const auto model = extractor_from(ck);
  const auto examples = data::read_jsonl(f.data);
  if (f.index >= examples.size()) {
    throw IndexError("--index " + std::to_string(f.index) + " out of range (" + std::to_string(examples.size()) +
                     " examples)");
  }
  const auto grids = eval::export_attention(model, examples[f.index], vocab, f.layer, ck.meta.max_len, f.per_head);
  eval::write_attention_tsv(out / "attention.tsv", grids);
  std::cout << "rows=" << grids[0].row_tokens.size() << " cols=" << grids[0].col_tokens.size()
            << " grids=" << grids.size() << "\n";
  return 0;
}

int cmd_trend_suite(const Flags& f) {
  auto cfg = resolve(f);
  if (!f.seeds.empty()) {
    try {
      cfg.set("trend.seeds", f.seeds);
    } catch (const PreconditionError& e) {
      throw UsageError(e.what());
    }
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& s : cfg.list("trend.seeds")) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + s + "' in trend.seeds");
    }
  }
  const auto out = prepare_out(f, cfg);
  eval::TrendOptions opt;
  try {
    opt = eval::trend_options(cfg);
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  opt.progress = [](const std::string& s) { std::cerr << s << "\n"; };
  const auto data = eval::prepare_synthetic(cfg);
  const auto report = eval::run_trend_suite(data, opt, seeds);
  const auto text = eval::format_trend_report(report);
  std::ofstream(out / "trend.tsv") << text;
  std::cout << text;
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"btx: bilingual terminology extraction toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic bilingual world");
  add_common(gen, f.common, true);

  auto* bpe = app.add_subcommand("learn-bpe", "Learn BPE merges and a vocabulary");
  add_common(bpe, f.common, true);
  bpe->add_option("--input", f.inputs, "Title files")->required()->check(CLI::ExistingFile);
  bpe->add_option("--pairs", f.pairs, "Term pairs TSV to include in the vocabulary")->check(CLI::ExistingFile);

  auto* build = app.add_subcommand("build-corpus", "Build labelled examples from pairs and titles");
  add_common(build, f.common, true);
  build->add_option("--pairs", f.pairs, "Term pairs TSV")->required()->check(CLI::ExistingFile);
  build->add_option("--src-titles", f.src_titles, "Source-language titles")->required()->check(CLI::ExistingFile);
  build->add_option("--tgt-titles", f.tgt_titles, "Target-language titles")->required()->check(CLI::ExistingFile);
  build->add_option("--bpe", f.bpe, "Merges file; learned from the titles when absent")->check(CLI::ExistingFile);

  auto* pre = app.add_subcommand("pretrain", "MLM or TLM pre-training");
  add_common(pre, f.common, true);
  pre->add_option("--manifest", f.manifest, "path<TAB>lang list of title files")->required()->check(CLI::ExistingFile);
  pre->add_option("--merges", f.merges, "Merges file")->required()->check(CLI::ExistingFile);
  pre->add_option("--vocab", f.vocab, "vocab.tsv (langs.tsv next to it)")->required()->check(CLI::ExistingFile);
  pre->add_option("--langs", f.langs, "langs.tsv")->check(CLI::ExistingFile);
  pre->add_option("--pairs", f.pairs, "Term pairs for the TLM stream")->check(CLI::ExistingFile);
  pre->add_option("--train-data", f.train_data, "Training JSONL; positives join the TLM stream")->check(CLI::ExistingFile);
  pre->add_option("--objective", f.objective, "Objective")->check(CLI::IsMember({"mlm", "tlm"}));
  pre->add_option("--init", f.init, "rand or a pretrain checkpoint to continue from");
  pre->add_flag("--allow-vocab-mismatch", f.allow_mismatch, "Load checkpoints with a different vocabulary");

  auto* train = app.add_subcommand("train", "Train a span extractor");
  add_common(train, f.common, true);
  train->add_option("--train-data", f.train_data, "Training JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--vocab", f.vocab, "vocab.tsv (langs.tsv next to it)")->required()->check(CLI::ExistingFile);
  train->add_option("--langs", f.langs, "langs.tsv")->check(CLI::ExistingFile);
  train->add_option("--extractor", f.extractor, "Architecture")->check(CLI::IsMember({"attn", "concat"}));
  train->add_option("--init", f.init, "rand or a checkpoint whose encoder initialises the model");
  train->add_flag("--no-source-term", f.no_source, "Concat layout without the source segment");
  train->add_flag("--tie-span-heads", f.tie_heads, "Share one head for start and end");
  train->add_flag("--allow-vocab-mismatch", f.allow_mismatch, "Load checkpoints with a different vocabulary");

  auto* ev = app.add_subcommand("eval", "Exact-match evaluation");
  add_common(ev, f.common, false);
  ev->add_option("--model", f.model, "Extractor checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", f.data, "Examples JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--vocab", f.vocab, "vocab.tsv (langs.tsv next to it)")->required()->check(CLI::ExistingFile);
  ev->add_option("--langs", f.langs, "langs.tsv")->check(CLI::ExistingFile);
  ev->add_flag("--allow-vocab-mismatch", f.allow_mismatch, "Load checkpoints with a different vocabulary");

  auto* ex = app.add_subcommand("extract", "Extract the translation of a term from a sentence");
  add_common(ex, f.common, false);
  ex->add_option("--model", f.model, "Extractor checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--merges", f.merges, "Merges file")->required()->check(CLI::ExistingFile);
  ex->add_option("--vocab", f.vocab, "vocab.tsv (langs.tsv next to it)")->required()->check(CLI::ExistingFile);
  ex->add_option("--langs", f.langs, "langs.tsv")->check(CLI::ExistingFile);
  ex->add_option("--term", f.term, "Source term")->required();
  ex->add_option("--sentence", f.sentence, "Target sentence")->required();
  ex->add_option("--src-lang", f.src_lang, "Source language code (default: first language)");
  ex->add_option("--tgt-lang", f.tgt_lang, "Target language code (default: second language)");
  ex->add_flag("--allow-vocab-mismatch", f.allow_mismatch, "Load checkpoints with a different vocabulary");

  auto* att = app.add_subcommand("export-attention", "Dump source-to-target attention of one example");
  add_common(att, f.common, true);
  att->add_option("--model", f.model, "Concat extractor checkpoint")->required()->check(CLI::ExistingFile);
  att->add_option("--data", f.data, "Examples JSONL")->required()->check(CLI::ExistingFile);
  att->add_option("--vocab", f.vocab, "vocab.tsv (langs.tsv next to it)")->required()->check(CLI::ExistingFile);
  att->add_option("--langs", f.langs, "langs.tsv")->check(CLI::ExistingFile);
  att->add_option("--index", f.index, "Example index");
  att->add_option("--layer", f.layer, "Encoder layer");
  att->add_flag("--per-head", f.per_head, "One grid per head instead of the mean");
  att->add_flag("--allow-vocab-mismatch", f.allow_mismatch, "Load checkpoints with a different vocabulary");

  auto* trend = app.add_subcommand("trend-suite", "Init, architecture and source ablations on a synthetic world");
  add_common(trend, f.common, true);
  trend->add_option("--seeds", f.seeds, "Comma-separated seeds (overrides trend.seeds)");
  trend->add_option("--jobs", f.jobs, "Grid cells trained in parallel")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_synthetic(f);
    if (bpe->parsed()) return cmd_learn_bpe(f);
    if (build->parsed()) return cmd_build_corpus(f);
    if (pre->parsed()) return cmd_pretrain(f);
    if (train->parsed()) return cmd_train(f);
    if (ev->parsed()) return cmd_eval(f);
    if (ex->parsed()) return cmd_extract(f);
    if (att->parsed()) return cmd_export_attention(f);
    if (trend->parsed()) return cmd_trend_suite(f);
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
