#include "btx/eval/attention.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "btx/core/errors.hpp"

namespace btx::eval {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

float parse_float(const std::string& s, std::size_t lineno) {
  errno = 0;
  char* end = nullptr;
  const float v = std::strtof(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw FormatError("attention tsv line " + std::to_string(lineno) + ": bad value '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<AttentionGrid> export_attention(const model::Extractor<float>& model,
                                            const data::LabeledExample& example,
                                            const text::Vocab& vocab, std::size_t layer,
                                            std::size_t max_len, bool per_head) {
  const auto& cfg = model.config();
  if (cfg.mode != model::ExtractorMode::concat) {
    throw PreconditionError("export_attention needs a concat-mode model");
  }
  if (cfg.drop_source) throw PreconditionError("export_attention needs a layout with a source segment");
  const auto& enc = model.encoder().config();
  if (layer >= enc.layers) {
    throw IndexError("layer " + std::to_string(layer) + " out of range (model has " +
                     std::to_string(enc.layers) + " layers)");
  }
  const auto input = model::make_extractor_input(example, vocab, cfg, max_len);
  Tape<float> tape(false);
  model::AttentionTrace<float> trace;
  model.forward(tape, {&input, 1}, model::RunMode{}, &trace);
  const Tensor<float>& w = trace.at(layer).at(0);  // [heads x L x L]

  const std::size_t m = example.src_term_tokens.size();
  const std::size_t n = example.tgt_sentence_tokens.size();
  const std::size_t heads = w.shape()[0];
  const std::size_t len = w.shape()[1];
  const auto& ids = input.target.token_ids;
  std::vector<std::string> rows, cols;
  for (std::size_t i = 0; i < m + 2; ++i) rows.push_back(vocab.token(ids[i]));
  for (std::size_t j = 0; j < n + 2; ++j) cols.push_back(vocab.token(ids[m + 1 + j]));

  auto grid = [&](const std::string& label, std::size_t h0, std::size_t h1) {
    AttentionGrid g{label, rows, cols, std::vector<std::vector<float>>(m + 2, std::vector<float>(n + 2))};
    for (std::size_t i = 0; i < m + 2; ++i) {
      for (std::size_t j = 0; j < n + 2; ++j) {
        double s = 0;
        for (std::size_t h = h0; h < h1; ++h) s += w[(h * len + i) * len + m + 1 + j];
        g.values[i][j] = static_cast<float>(s / static_cast<double>(h1 - h0));
      }
    }
    return g;
  };
  std::vector<AttentionGrid> out;
  if (per_head) {
    for (std::size_t h = 0; h < heads; ++h) out.push_back(grid("head" + std::to_string(h), h, h + 1));
  } else {
    out.push_back(grid("mean", 0, heads));
  }
  return out;
}

std::string format_attention_tsv(const std::vector<AttentionGrid>& grids) {
  std::string out;
  char buf[32];
  for (const auto& g : grids) {
    out += "# " + g.label + "\n";
    for (const auto& c : g.col_tokens) out += "\t" + c;
    out += "\n";
    for (std::size_t i = 0; i < g.row_tokens.size(); ++i) {
      out += g.row_tokens[i];
      for (const float v : g.values[i]) {
        std::snprintf(buf, sizeof buf, "\t%.9g", static_cast<double>(v));
        out += buf;
      }
      out += "\n";
    }
  }
  return out;
}

std::vector<AttentionGrid> parse_attention_tsv(const std::string& text) {
  std::vector<AttentionGrid> grids;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool want_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("# ", 0) == 0) {
      grids.push_back(AttentionGrid{line.substr(2), {}, {}, {}});
      want_header = true;
      continue;
    }
    if (grids.empty()) throw FormatError("attention tsv line " + std::to_string(lineno) + ": missing '# label'");
    auto& g = grids.back();
    auto cells = split_tabs(line);
    if (want_header) {
      if (cells.size() < 2 || !cells[0].empty()) {
        throw FormatError("attention tsv line " + std::to_string(lineno) + ": bad column header");
      }
      g.col_tokens.assign(cells.begin() + 1, cells.end());
      want_header = false;
      continue;
    }
    if (cells.size() != g.col_tokens.size() + 1) {
      throw FormatError("attention tsv line " + std::to_string(lineno) + ": expected " +
                        std::to_string(g.col_tokens.size() + 1) + " cells, got " +
                        std::to_string(cells.size()));
    }
    g.row_tokens.push_back(cells[0]);
    std::vector<float> row;
    for (std::size_t j = 1; j < cells.size(); ++j) row.push_back(parse_float(cells[j], lineno));
    g.values.push_back(std::move(row));
  }
  if (want_header) throw FormatError("attention tsv: truncated grid");
  return grids;
}

void write_attention_tsv(const std::filesystem::path& path, const std::vector<AttentionGrid>& grids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << format_attention_tsv(grids);
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<AttentionGrid> read_attention_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_attention_tsv(s.str());
}

}  // namespace btx::eval
