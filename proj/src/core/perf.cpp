#include "core/perf.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "core/error.hpp"

namespace nvlm {

const ArchCost& CostReport::of(Arch arch) const {
  switch (arch) {
    case Arch::D: return d;
    case Arch::X: return x;
    case Arch::H: return h;
  }
  fail(ErrorCode::Internal, "bad arch value");
}

ArchCost& CostReport::of(Arch arch) {
  return const_cast<ArchCost&>(static_cast<const CostReport*>(this)->of(arch));
}

namespace {

ArchCost flop_terms(const ArchConfig& cfg, int decoder_len, int kv_len) {
  ArchCost c;
  c.decoder_len = decoder_len;
  c.kv_len = kv_len;
  double L = cfg.n_layers;
  double len = decoder_len;
  double dm = cfg.d_model;
  c.self_attn_flops = 4.0 * L * len * len * dm;
  c.cross_attn_flops = 4.0 * cfg.n_xattn * len * static_cast<double>(kv_len) * dm;
  c.mlp_flops = 24.0 * L * len * dm * dm;
  return c;
}

}  // namespace

CostReport analytic_cost(const ArchConfig& cfg, int text_len, int tiles) {
  if (text_len < 0) fail(ErrorCode::InvalidArgument, "negative text length");
  if (tiles < 0) fail(ErrorCode::InvalidArgument, "negative tile count");
  if (tiles > cfg.max_tiles)
    fail(ErrorCode::InvalidArgument, "tile count ", tiles, " exceeds max_tiles ", cfg.max_tiles);

  int T = cfg.tokens_per_tile;
  int blocks = tiles > 0 ? tiles + 1 : 0;
  CostReport rep;
  rep.text_len = text_len;
  rep.tiles = tiles;
  rep.tokens_per_tile = T;
  rep.d = flop_terms(cfg, text_len + T * blocks, 0);
  rep.x = flop_terms(cfg, text_len, T * blocks);
  rep.h = flop_terms(cfg, tiles > 0 ? text_len + T : text_len, T * tiles);
  return rep;
}

BenchResult microbench(Arch arch, const BenchRequest& req) {
  if (req.reps < 3) fail(ErrorCode::InvalidArgument, "microbench needs at least 3 reps");
  if (req.text_len < 0) fail(ErrorCode::InvalidArgument, "negative text length");

  // Toy decoder dims, but 16 tokens per tile and no tags: the per-arch length
  // gaps then dominate run-to-run noise.
  ModelConfig bench_cfg = ModelConfig::toy(arch, req.seed);
  bench_cfg.tag_scheme = TagScheme::NoTag;
  bench_cfg.encoder.tile_size = 64;
  bench_cfg.decoder.tokens_per_tile = 16;
  ModelInstance model(bench_cfg);
  const ModelConfig& cfg = model.config();
  if (req.tiles < 0 || req.tiles > cfg.decoder.max_tiles)
    fail(ErrorCode::InvalidArgument, "unsupported bench tile count ", req.tiles);

  TrainingExample ex;
  ex.prompt = std::string(static_cast<std::size_t>(req.text_len), 'u');
  ex.response = "ok";
  if (req.tiles > 0) {
    // A 1:tiles aspect image lands exactly on the 1 x tiles grid.
    int side = cfg.encoder.tile_size;
    Image img(side, side * req.tiles, cfg.encoder.in_channels);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < img.channels; ++c)
          img.at(x, y, c) = ((x + y) % 7) * 36.0;
    ex.image = std::move(img);
    ex.prompt = kImageMarker + ex.prompt;
    PlanResult plan = model.plan(ex);
    if (plan.layout.tile_count() != req.tiles)
      fail(ErrorCode::Internal, "bench image landed on ", plan.layout.tile_count(), " tiles");
  }

  BenchResult res;
  for (int i = 0; i <= req.reps; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    Graph g;
    GraphBinder b(g, model.params());
    auto out = model.forward(g, b, ex);
    g.backward(out.loss);
    auto t1 = std::chrono::steady_clock::now();
    if (i == 0) continue;  // warmup, also fills the encode cache
    res.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = res.samples_ms;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  res.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return res;
}

namespace {

nlohmann::json arch_json(const ArchCost& c) {
  nlohmann::json j;
  j["decoder_len"] = c.decoder_len;
  j["kv_len"] = c.kv_len;
  j["self_attn_flops"] = c.self_attn_flops;
  j["cross_attn_flops"] = c.cross_attn_flops;
  j["mlp_flops"] = c.mlp_flops;
  j["total_flops"] = c.total_flops();
  if (c.measured_ms >= 0.0) j["measured_ms"] = c.measured_ms;
  return j;
}

}  // namespace

std::string cost_report_json(const CostReport& rep) {
  nlohmann::json j;
  j["text_len"] = rep.text_len;
  j["tiles"] = rep.tiles;
  j["tokens_per_tile"] = rep.tokens_per_tile;
  j["arch"]["D"] = arch_json(rep.d);
  j["arch"]["X"] = arch_json(rep.x);
  j["arch"]["H"] = arch_json(rep.h);
  return j.dump(2);
}

std::string cost_report_table(const CostReport& rep) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "text=%d tiles=%d tokens_per_tile=%d\n", rep.text_len,
                rep.tiles, rep.tokens_per_tile);
  out += line;
  std::snprintf(line, sizeof line, "%-4s %11s %7s %14s %14s %14s %14s %12s\n", "arch",
                "decoder_len", "kv_len", "self_flops", "cross_flops", "mlp_flops", "total_flops",
                "measured_ms");
  out += line;
  for (Arch a : {Arch::X, Arch::H, Arch::D}) {
    const ArchCost& c = rep.of(a);
    char ms[32];
    if (c.measured_ms >= 0.0)
      std::snprintf(ms, sizeof ms, "%.3f", c.measured_ms);
    else
      std::snprintf(ms, sizeof ms, "-");
    std::snprintf(line, sizeof line, "%-4s %11d %7d %14.4g %14.4g %14.4g %14.4g %12s\n",
                  to_string(a).c_str(), c.decoder_len, c.kv_len, c.self_attn_flops,
                  c.cross_attn_flops, c.mlp_flops, c.total_flops(), ms);
    out += line;
  }
  return out;
}

}  // namespace nvlm
