#pragma once

#include <string>
#include <vector>

#include "core/assembly.hpp"

namespace nvlm {

// Cost of one forward pass for a single architecture. FLOP terms are
// order-of-magnitude estimates built from matmul counts; constants are
// consistent across architectures so the ordering is meaningful.
struct ArchCost {
  int decoder_len = 0;
  int kv_len = 0;
  double self_attn_flops = 0.0;
  double cross_attn_flops = 0.0;
  double mlp_flops = 0.0;
  double measured_ms = -1.0;  // <0 means not measured

  double total_flops() const { return self_attn_flops + cross_attn_flops + mlp_flops; }
};

struct CostReport {
  int text_len = 0;
  int tiles = 0;
  int tokens_per_tile = 0;
  ArchCost d, x, h;

  const ArchCost& of(Arch arch) const;
  ArchCost& of(Arch arch);
};

// Sequence-length accounting for an image on `tiles` regular tiles plus a
// thumbnail (no image at all when tiles is 0):
//   decoder_len(D) = text + T*(tiles+1)   every block enters the decoder
//   decoder_len(H) = text + T             thumbnail only; tiles go to kv
//   decoder_len(X) = text                 all blocks go to kv
// Tag tokens are excluded, matching the no-tag accounting. Cross-attention
// terms use cfg.n_xattn; a config wired without x-attn layers reports zero
// cross cost.
CostReport analytic_cost(const ArchConfig& cfg, int text_len, int tiles);

struct BenchRequest {
  int text_len = 32;  // user text bytes in the synthetic example
  int tiles = 6;      // regular tiles; 0 benches a text-only example
  int reps = 5;       // timed iterations after one discarded warmup
  std::uint64_t seed = kDefaultSeed;
};

struct BenchResult {
  double median_ms = 0.0;
  std::vector<double> samples_ms;  // post-warmup, in run order
};

// Times forward+backward of a toy-scale model on one fixed example,
// single-threaded. The warmup iteration also fills the image encode cache, so
// the timed part is decoder-side work only.
BenchResult microbench(Arch arch, const BenchRequest& req);

std::string cost_report_json(const CostReport& rep);
std::string cost_report_table(const CostReport& rep);

}  // namespace nvlm
