#include "btx/io/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "btx/core/errors.hpp"

namespace btx::io {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void fail_at(std::size_t offset, const std::string& what) {
  throw FormatError("checkpoint byte " + std::to_string(offset) + ": " + what);
}

Json encoder_json(const model::EncoderConfig& c) {
  Json j;
  j["d"] = c.d;
  j["d_ff"] = c.d_ff;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["max_positions"] = c.max_positions;
  j["vocab_size"] = c.vocab_size;
  j["n_langs"] = c.n_langs;
  j["dropout"] = c.dropout;
  return j;
}

model::EncoderConfig encoder_from(const Json& j) {
  model::EncoderConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.n_langs = j.at("n_langs").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

void put_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

float get_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::string serialize_checkpoint(const ParamStore<float>& store, const CheckpointMeta& meta) {
  Json header;
  header["kind"] = meta.kind;
  header["encoder"] = encoder_json(meta.encoder);
  if (meta.extractor) {
    header["extractor"] = {{"mode", std::string(model::mode_name(meta.extractor->mode))},
                           {"tie_span_heads", meta.extractor->tie_span_heads},
                           {"drop_source", meta.extractor->drop_source}};
  } else {
    header["extractor"] = nullptr;
  }
  header["vocab_fingerprint"] = meta.vocab_fingerprint;
  header["languages"] = meta.languages;
  header["max_len"] = meta.max_len;
  Json manifest = Json::array();
  std::size_t offset = 0;
  store.for_each([&](const Parameter<float>& p) {
    for (const float v : p.value.values()) {
      if (!std::isfinite(v)) throw NumericError("checkpoint: non-finite value in " + p.name);
    }
    manifest.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += 4 * p.value.numel();
  });
  header["tensors"] = manifest;
  header["payload_bytes"] = offset;
  const std::string text = header.dump(1) + "\n";

  std::string out(kCheckpointMagic);
  out += "header_bytes " + std::to_string(text.size()) + "\n";
  out += text;
  out.reserve(out.size() + offset);
  store.for_each([&](const Parameter<float>& p) {
    for (const float v : p.value.values()) put_le(out, v);
  });
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes, const LoadOptions& options) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) fail_at(0, "bad magic, expected BTXE1");
  std::size_t pos = kCheckpointMagic.size();
  const auto eol = bytes.find('\n', pos);
  const std::string_view prefix = "header_bytes ";
  if (eol == std::string_view::npos || bytes.substr(pos, prefix.size()) != prefix) {
    fail_at(pos, "expected 'header_bytes <N>' line");
  }
  std::size_t header_len = 0;
  try {
    std::size_t used = 0;
    const std::string num(bytes.substr(pos + prefix.size(), eol - pos - prefix.size()));
    header_len = std::stoull(num, &used);
    if (used != num.size()) throw std::invalid_argument(num);
  } catch (const std::exception&) {
    fail_at(pos + prefix.size(), "bad header length");
  }
  pos = eol + 1;
  if (bytes.size() - pos < header_len) {
    fail_at(bytes.size(), "truncated header, needs " + std::to_string(header_len) + " bytes from byte " +
                              std::to_string(pos));
  }
  Json header;
  try {
    header = Json::parse(bytes.substr(pos, header_len));
  } catch (const Json::parse_error& e) {
    fail_at(pos + e.byte, std::string("header is not valid JSON: ") + e.what());
  }
  const std::size_t header_start = pos;
  pos += header_len;

  Checkpoint ck;
  std::size_t payload_bytes = 0;
  std::vector<std::tuple<std::string, Shape, std::size_t>> manifest;
  try {
    ck.meta.kind = header.at("kind").get<std::string>();
    ck.meta.encoder = encoder_from(header.at("encoder"));
    const auto& ex = header.at("extractor");
    if (!ex.is_null()) {
      model::ExtractorConfig cfg;
      cfg.mode = model::parse_mode(ex.at("mode").get<std::string>());
      cfg.tie_span_heads = ex.at("tie_span_heads").get<bool>();
      cfg.drop_source = ex.at("drop_source").get<bool>();
      ck.meta.extractor = cfg;
    }
    ck.meta.vocab_fingerprint = header.at("vocab_fingerprint").get<std::string>();
    ck.meta.languages = header.at("languages").get<std::vector<std::string>>();
    ck.meta.max_len = header.at("max_len").get<std::size_t>();
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
    for (const auto& t : header.at("tensors")) {
      manifest.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                            t.at("offset").get<std::size_t>());
    }
  } catch (const Json::exception& e) {
    fail_at(header_start, std::string("bad header manifest: ") + e.what());
  } catch (const PreconditionError& e) {
    fail_at(header_start, std::string("bad header manifest: ") + e.what());
  }

  if (options.expect_vocab_fingerprint && *options.expect_vocab_fingerprint != ck.meta.vocab_fingerprint &&
      !options.allow_fingerprint_mismatch) {
    throw PreconditionError("checkpoint vocab fingerprint " + ck.meta.vocab_fingerprint +
                            " does not match vocabulary " + *options.expect_vocab_fingerprint);
  }

  const std::size_t payload_start = pos;
  const std::size_t available = bytes.size() - payload_start;
  std::size_t expect_offset = 0;
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + payload_start;
  for (const auto& [name, shape, offset] : manifest) {
    if (offset != expect_offset) {
      fail_at(payload_start + offset, "tensor '" + name + "' offset " + std::to_string(offset) +
                                          " is not contiguous (expected " + std::to_string(expect_offset) + ")");
    }
    std::size_t n = 1;
    for (const auto s : shape) n *= s;
    if (shape.empty() || n == 0) fail_at(header_start, "tensor '" + name + "' has an empty shape");
    if (available < offset + 4 * n) {
      fail_at(bytes.size(), "truncated payload: tensor '" + name + "' needs bytes up to " +
                                std::to_string(payload_start + offset + 4 * n));
    }
    Tensor<float> t(shape);
    auto vals = t.values();
    for (std::size_t i = 0; i < n; ++i) vals[i] = get_le(base + offset + 4 * i);
    try {
      ck.params.add(name, std::move(t));
    } catch (const PreconditionError& e) {
      fail_at(header_start, e.what());
    }
    expect_offset = offset + 4 * n;
  }
  if (expect_offset != payload_bytes) {
    fail_at(payload_start + expect_offset, "manifest covers " + std::to_string(expect_offset) +
                                               " payload bytes, header says " + std::to_string(payload_bytes));
  }
  if (available != payload_bytes) {
    fail_at(payload_start + std::min(available, payload_bytes),
            available < payload_bytes ? "truncated payload" : "trailing bytes after payload");
  }
  return ck;
}

void save_checkpoint(const ParamStore<float>& store, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(store, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_checkpoint(s.str(), options);
}

ParamStore<float> clone_params(const ParamStore<float>& store) {
  ParamStore<float> out;
  store.for_each([&](const Parameter<float>& p) { out.add(p.name, p.value); });
  return out;
}

std::vector<std::string> copy_encoder_params(const ParamStore<float>& from,
                                             const model::EncoderConfig& from_cfg,
                                             ParamStore<float>& to,
                                             const model::EncoderConfig& to_cfg) {
  auto a = from_cfg, b = to_cfg;
  a.dropout = b.dropout = 0;
  if (!(a == b)) {
    throw PreconditionError("checkpoint encoder config (d=" + std::to_string(from_cfg.d) + ", layers=" +
                            std::to_string(from_cfg.layers) + ", heads=" + std::to_string(from_cfg.heads) +
                            ", vocab=" + std::to_string(from_cfg.vocab_size) +
                            ") does not match the model being initialised (d=" + std::to_string(to_cfg.d) +
                            ", layers=" + std::to_string(to_cfg.layers) + ", heads=" +
                            std::to_string(to_cfg.heads) + ", vocab=" + std::to_string(to_cfg.vocab_size) + ")");
  }
  const auto names = model::Encoder<float>::param_names(to_cfg);
  for (const auto& n : names) {
    const auto& src = from.get(n).value;
    auto& dst = to.get(n).value;
    if (src.shape() != dst.shape()) throw DimensionError("checkpoint tensor " + n + " has the wrong shape");
    dst = src;
  }
  return names;
}

}  // namespace btx::io
