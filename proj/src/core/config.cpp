#include "core/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace nvlm {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips an unquoted trailing comment, then surrounding quotes if present.
std::string parse_value(const std::string& raw, int line_no) {
  std::string v = trim(raw);
  if (!v.empty() && v.front() == '"') {
    std::size_t close = v.find('"', 1);
    if (close == std::string::npos)
      fail(ErrorCode::InvalidArgument, "config line ", line_no, ": unterminated string");
    std::string rest = trim(v.substr(close + 1));
    if (!rest.empty() && rest.front() != '#')
      fail(ErrorCode::InvalidArgument, "config line ", line_no, ": trailing text after string");
    return v.substr(1, close - 1);
  }
  std::size_t hash = v.find('#');
  if (hash != std::string::npos) v = trim(v.substr(0, hash));
  if (v.empty()) fail(ErrorCode::InvalidArgument, "config line ", line_no, ": empty value");
  return v;
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text) {
  ConfigMap cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        fail(ErrorCode::InvalidArgument, "config line ", line_no, ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        fail(ErrorCode::InvalidArgument, "config line ", line_no, ": empty section name");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::InvalidArgument, "config line ", line_no, ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    if (key.empty()) fail(ErrorCode::InvalidArgument, "config line ", line_no, ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (cfg.values_.count(key))
      fail(ErrorCode::InvalidArgument, "config line ", line_no, ": duplicate key ", key);
    cfg.values_[key] = parse_value(t.substr(eq + 1), line_no);
  }
  return cfg;
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open config file ", path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ConfigMap::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int ConfigMap::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    fail(ErrorCode::InvalidArgument, "config key ", key, ": not an integer: ", v);
  return out;
}

std::uint64_t ConfigMap::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    fail(ErrorCode::InvalidArgument, "config key ", key, ": not an unsigned integer: ", v);
  return out;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty())
    fail(ErrorCode::InvalidArgument, "config key ", key, ": not a number: ", v);
  return out;
}

namespace {

const char* kModelKeys[] = {"model.arch", "model.tag_scheme", "model.shuffle_factor",
                            "model.proj_hidden"};
const char* kEncoderKeys[] = {"encoder.tile_size", "encoder.patch_size", "encoder.in_channels",
                              "encoder.embed_dim", "encoder.depth", "encoder.heads"};
const char* kDecoderKeys[] = {"decoder.n_layers",    "decoder.d_model",
                              "decoder.n_heads",     "decoder.vocab",
                              "decoder.max_seq",     "decoder.xattn_every",
                              "decoder.n_xattn",     "decoder.tokens_per_tile",
                              "decoder.max_tiles"};

bool known_model_key(const std::string& key) {
  for (const char* k : kModelKeys)
    if (key == k) return true;
  for (const char* k : kEncoderKeys)
    if (key == k) return true;
  for (const char* k : kDecoderKeys)
    if (key == k) return true;
  return false;
}

}  // namespace

ModelConfig model_config_from(const ConfigMap& cfg) {
  for (const auto& [key, value] : cfg.values()) {
    bool model_section = key.rfind("model.", 0) == 0 || key.rfind("encoder.", 0) == 0 ||
                         key.rfind("decoder.", 0) == 0;
    if (model_section && !known_model_key(key))
      fail(ErrorCode::InvalidArgument, "unknown config key ", key);
  }
  Arch arch = arch_from_string(cfg.get_str("model.arch", "D"));
  std::uint64_t seed = cfg.get_u64("seed", kDefaultSeed);
  ModelConfig mc = ModelConfig::toy(arch, seed);
  mc.tag_scheme = tag_scheme_from_string(cfg.get_str("model.tag_scheme", to_string(mc.tag_scheme)));
  mc.shuffle_factor = cfg.get_int("model.shuffle_factor", mc.shuffle_factor);
  mc.proj_hidden = cfg.get_int("model.proj_hidden", mc.proj_hidden);

  mc.encoder.tile_size = cfg.get_int("encoder.tile_size", mc.encoder.tile_size);
  mc.encoder.patch_size = cfg.get_int("encoder.patch_size", mc.encoder.patch_size);
  mc.encoder.in_channels = cfg.get_int("encoder.in_channels", mc.encoder.in_channels);
  mc.encoder.embed_dim = cfg.get_int("encoder.embed_dim", mc.encoder.embed_dim);
  mc.encoder.depth = cfg.get_int("encoder.depth", mc.encoder.depth);
  mc.encoder.heads = cfg.get_int("encoder.heads", mc.encoder.heads);

  mc.decoder.n_layers = cfg.get_int("decoder.n_layers", mc.decoder.n_layers);
  mc.decoder.d_model = cfg.get_int("decoder.d_model", mc.decoder.d_model);
  mc.decoder.n_heads = cfg.get_int("decoder.n_heads", mc.decoder.n_heads);
  mc.decoder.vocab = cfg.get_int("decoder.vocab", mc.decoder.vocab);
  mc.decoder.max_seq = cfg.get_int("decoder.max_seq", mc.decoder.max_seq);
  mc.decoder.xattn_every = cfg.get_int("decoder.xattn_every", mc.decoder.xattn_every);
  mc.decoder.n_xattn = cfg.get_int("decoder.n_xattn", mc.decoder.n_xattn);
  mc.decoder.tokens_per_tile = cfg.get_int("decoder.tokens_per_tile", mc.decoder.tokens_per_tile);
  mc.decoder.max_tiles = cfg.get_int("decoder.max_tiles", mc.decoder.max_tiles);
  mc.validate();
  return mc;
}

OverfitConfig overfit_config_from(const ConfigMap& cfg) {
  OverfitConfig oc;
  oc.max_steps = cfg.get_int("train.max_steps", oc.max_steps);
  oc.threshold = cfg.get_double("train.threshold", oc.threshold);
  oc.optimizer.lr = cfg.get_double("train.lr", oc.optimizer.lr);
  oc.optimizer.beta1 = cfg.get_double("train.beta1", oc.optimizer.beta1);
  oc.optimizer.beta2 = cfg.get_double("train.beta2", oc.optimizer.beta2);
  oc.optimizer.eps = cfg.get_double("train.eps", oc.optimizer.eps);
  oc.optimizer.weight_decay = cfg.get_double("train.weight_decay", oc.optimizer.weight_decay);
  std::string stage = cfg.get_str("train.stage", "full");
  if (stage == "full")
    oc.stage = TrainStage::Full;
  else if (stage == "align")
    oc.stage = TrainStage::Alignment;
  else
    fail(ErrorCode::InvalidArgument, "train.stage must be align or full, got ", stage);
  oc.examples = cfg.get_int("train.examples", oc.examples);
  if (oc.max_steps < 0) fail(ErrorCode::InvalidArgument, "train.max_steps must be >= 0");
  if (oc.threshold <= 0.0) fail(ErrorCode::InvalidArgument, "train.threshold must be positive");
  if (oc.examples < 1 || oc.examples > 64)
    fail(ErrorCode::InvalidArgument, "train.examples must be in [1, 64], got ", oc.examples);
  return oc;
}

BenchRequest bench_request_from(const ConfigMap& cfg) {
  BenchRequest br;
  br.text_len = cfg.get_int("bench.text_len", br.text_len);
  br.tiles = cfg.get_int("bench.tiles", br.tiles);
  br.reps = cfg.get_int("bench.reps", br.reps);
  br.seed = cfg.get_u64("seed", br.seed);
  return br;
}

namespace {

// Shortest round-trip decimal form, locale-independent.
std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

std::string dump_config(const ModelConfig& model, const OverfitConfig& train,
                        const BenchRequest& bench) {
  std::map<std::string, std::string> kv;
  kv["model.arch"] = to_string(model.arch);
  kv["model.tag_scheme"] = to_string(model.tag_scheme);
  kv["model.shuffle_factor"] = std::to_string(model.shuffle_factor);
  kv["model.proj_hidden"] = std::to_string(model.proj_hidden);
  kv["encoder.tile_size"] = std::to_string(model.encoder.tile_size);
  kv["encoder.patch_size"] = std::to_string(model.encoder.patch_size);
  kv["encoder.in_channels"] = std::to_string(model.encoder.in_channels);
  kv["encoder.embed_dim"] = std::to_string(model.encoder.embed_dim);
  kv["encoder.depth"] = std::to_string(model.encoder.depth);
  kv["encoder.heads"] = std::to_string(model.encoder.heads);
  kv["decoder.n_layers"] = std::to_string(model.decoder.n_layers);
  kv["decoder.d_model"] = std::to_string(model.decoder.d_model);
  kv["decoder.n_heads"] = std::to_string(model.decoder.n_heads);
  kv["decoder.vocab"] = std::to_string(model.decoder.vocab);
  kv["decoder.max_seq"] = std::to_string(model.decoder.max_seq);
  kv["decoder.xattn_every"] = std::to_string(model.decoder.xattn_every);
  kv["decoder.n_xattn"] = std::to_string(model.decoder.n_xattn);
  kv["decoder.tokens_per_tile"] = std::to_string(model.decoder.tokens_per_tile);
  kv["decoder.max_tiles"] = std::to_string(model.decoder.max_tiles);
  kv["seed"] = std::to_string(model.decoder.seed);
  kv["train.max_steps"] = std::to_string(train.max_steps);
  kv["train.examples"] = std::to_string(train.examples);
  kv["train.threshold"] = fmt_double(train.threshold);
  kv["train.lr"] = fmt_double(train.optimizer.lr);
  kv["train.beta1"] = fmt_double(train.optimizer.beta1);
  kv["train.beta2"] = fmt_double(train.optimizer.beta2);
  kv["train.eps"] = fmt_double(train.optimizer.eps);
  kv["train.weight_decay"] = fmt_double(train.optimizer.weight_decay);
  kv["train.stage"] = train.stage == TrainStage::Full ? "full" : "align";
  kv["bench.text_len"] = std::to_string(bench.text_len);
  kv["bench.tiles"] = std::to_string(bench.tiles);
  kv["bench.reps"] = std::to_string(bench.reps);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace nvlm
