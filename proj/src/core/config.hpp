#pragma once

#include <map>
#include <string>

#include "core/assembly.hpp"
#include "core/perf.hpp"

namespace nvlm {

// Flat key/value config in a TOML-like syntax: `key = value` lines, `#`
// comments, and `[section]` headers that prefix the keys that follow
// (`[decoder]` + `n_layers = 4` yields `decoder.n_layers`). Values keep their
// source text; typed getters parse on access.
class ConfigMap {
 public:
  static ConfigMap parse(const std::string& text);
  static ConfigMap parse_file(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Keys: model.arch, model.tag_scheme, model.shuffle_factor, model.proj_hidden,
// encoder.*, decoder.*, seed. Unknown keys under those sections are rejected;
// the result is validated before returning.
ModelConfig model_config_from(const ConfigMap& cfg);

// Keys: train.lr, train.beta1/2, train.eps, train.weight_decay,
// train.max_steps, train.threshold, train.stage (align|full).
OverfitConfig overfit_config_from(const ConfigMap& cfg);

// Keys: bench.text_len, bench.tiles, bench.reps, seed.
BenchRequest bench_request_from(const ConfigMap& cfg);

// Canonical `key = value` rendering of the effective settings, sorted by key;
// parsing it back reproduces the same configs.
std::string dump_config(const ModelConfig& model, const OverfitConfig& train,
                        const BenchRequest& bench);

}  // namespace nvlm
