// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include "icllab/runner/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "icllab/errors.hpp"

namespace icllab::runner {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "icllab-checkpoint 1";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path);
}

std::string encode_le(const ParamSet& ps) {
  std::string out;
  out.reserve(ps.count() * 8);
  for (const auto& t : ps) {
    for (double v : t.value.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  return out;
}

double decode_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
  return std::bit_cast<double>(bits);
}

std::string lookup(const Checkpoint& c, const std::string& key) {
  for (const auto& [k, v] : c.config)
    if (k == key) return v;
  throw FormatError("checkpoint config is missing '" + key + "'");
}

std::size_t lookup_size(const Checkpoint& c, const std::string& key) {
  const std::string v = lookup(c, key);
  try {
    std::size_t pos = 0;
    const auto n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw FormatError("checkpoint config '" + key + "' is not an integer: " + v);
  }
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string manifest_path(const std::string& stem) { return stem + ".manifest"; }
std::string blob_path(const std::string& stem) { return stem + ".bin"; }

std::string stem_of(const std::string& path) {
  fs::path p(path);
  if (p.extension() == ".manifest" || p.extension() == ".bin") p.replace_extension();
  return p.filename().string();
}

std::vector<std::string> save_checkpoint(const std::string& stem, const Checkpoint& ckpt) {
  const std::string blob = encode_le(ckpt.params);
  std::ostringstream m;
  m << kMagic << '\n';
  m << "kind " << ckpt.kind << '\n';
  m << "blob " << fs::path(blob_path(stem)).filename().string() << '\n';
  m << "bytes " << blob.size() << '\n';
  m << "checksum fnv1a64:" << hex64(fnv1a(blob.data(), blob.size())) << '\n';
  m << "tensors " << ckpt.params.size() << '\n';
  for (const auto& t : ckpt.params) {
    m << "tensor " << t.name;
    for (auto e : t.value.shape()) m << ' ' << e;
    m << '\n';
  }
  m << "config " << ckpt.config.size() << '\n';
  for (const auto& [k, v] : ckpt.config) m << k << " = " << v << '\n';
  write_file(blob_path(stem), blob);
  write_file(manifest_path(stem), m.str());
  return {manifest_path(stem), blob_path(stem)};
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string stem = path;
  if (fs::path(path).extension() == ".manifest") stem = (fs::path(path).parent_path() / stem_of(path)).string();
  const std::string mpath = manifest_path(stem);
  std::istringstream in(read_file(mpath));
  auto fail = [&](const std::string& msg) -> FormatError { return FormatError(mpath + ": " + msg); };
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw fail("not an icllab checkpoint manifest");
  auto field = [&](const std::string& name) {
    if (!std::getline(in, line) || line.rfind(name + " ", 0) != 0) throw fail("expected '" + name + "' line");
    return line.substr(name.size() + 1);
  };
  Checkpoint c;
  c.kind = field("kind");
  const std::string blob_name = field("blob");
  const std::size_t bytes = std::stoull(field("bytes"));
  const std::string checksum = field("checksum");
  const std::size_t n_tensors = std::stoull(field("tensors"));
  std::vector<std::pair<std::string, ndiff::Shape>> layout;
  std::size_t total = 0;
  for (std::size_t i = 0; i < n_tensors; ++i) {
    std::istringstream ts(field("tensor"));
    std::string name;
    ts >> name;
    ndiff::Shape shape;
    std::size_t e;
    while (ts >> e) shape.push_back(e);
    total += ndiff::numel_of(shape);
    layout.emplace_back(std::move(name), std::move(shape));
  }
  const std::size_t n_config = std::stoull(field("config"));
  for (std::size_t i = 0; i < n_config; ++i) {
    if (!std::getline(in, line)) throw fail("truncated config echo");
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw fail("bad config echo line '" + line + "'");
    c.config.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  if (total * 8 != bytes) throw fail("tensor shapes need " + std::to_string(total * 8) + " bytes, manifest says " +
                                     std::to_string(bytes));
  const std::string blob = read_file((fs::path(mpath).parent_path() / blob_name).string());
  if (blob.size() != bytes) throw fail("blob holds " + std::to_string(blob.size()) + " bytes, expected " +
                                       std::to_string(bytes));
  if (checksum != "fnv1a64:" + hex64(fnv1a(blob.data(), blob.size()))) throw fail("blob checksum mismatch");
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  for (auto& [name, shape] : layout) {
    ndiff::Tensor t = ndiff::Tensor::zeros(shape);
    for (auto& v : t.data()) {
      v = decode_le(p);
      p += 8;
    }
    c.params.add(name, std::move(t));
  }
  return c;
}

Checkpoint gpt_checkpoint(const gpt::GptConfig& cfg, const ParamSet& params) {
  Checkpoint c;
  c.kind = "gpt";
  c.config = {{"layers", std::to_string(cfg.n_layers)},
              {"heads", std::to_string(cfg.n_heads)},
              {"embd", std::to_string(cfg.n_embd)},
              {"d", std::to_string(cfg.d)},
              {"max_positions", std::to_string(cfg.max_positions)},
              {"curriculum", cfg.curriculum ? "true" : "false"},
              {"seed", std::to_string(cfg.seed)}};
  c.params = params;
  return c;
}

Checkpoint lsa_checkpoint(const lsa::LsaParams& params) {
  Checkpoint c;
  c.kind = "lsa";
  c.config = {{"d", std::to_string(params.d())}};
  c.params = params.to_params();
  return c;
}

gpt::GptConfig gpt_config_of(const Checkpoint& ckpt) {
  if (ckpt.kind != "gpt") throw FormatError("checkpoint kind is '" + ckpt.kind + "', expected gpt");
  gpt::GptConfig cfg;
  cfg.n_layers = lookup_size(ckpt, "layers");
  cfg.n_heads = lookup_size(ckpt, "heads");
  cfg.n_embd = lookup_size(ckpt, "embd");
  cfg.d = lookup_size(ckpt, "d");
  cfg.max_positions = lookup_size(ckpt, "max_positions");
  cfg.curriculum = lookup(ckpt, "curriculum") == "true";
  cfg.seed = lookup_size(ckpt, "seed");
  return cfg;
}

std::unique_ptr<Predictor> load_predictor(const std::string& path, std::string id) {
  if (id.empty()) id = stem_of(path);
  Checkpoint c = load_checkpoint(path);
  if (c.kind == "gpt") {
    const auto cfg = gpt_config_of(c);
    return std::make_unique<gpt::GptPredictor>(cfg, std::move(c.params), std::move(id));
  }
  if (c.kind == "lsa") return std::make_unique<lsa::LsaPredictor>(lsa::LsaParams::from_params(c.params), std::move(id));
  throw FormatError("unknown checkpoint kind '" + c.kind + "'");
}

}  // namespace icllab::runner
