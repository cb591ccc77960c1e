#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/attention.hpp"
#include "core/autodiff.hpp"
#include "core/binder.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/sequence.hpp"

namespace nvlm {

struct ArchConfig {
  int n_layers = 4;
  int d_model = 32;
  int n_heads = 4;
  int vocab = 320;
  int max_seq = 512;
  int xattn_every = 0;  // 0 disables cross-attention
  int n_xattn = 0;
  int tokens_per_tile = 4;
  int max_tiles = 6;
  std::uint64_t seed = kDefaultSeed;

  bool has_xattn() const { return xattn_every > 0; }
  void validate() const;
};

// Input embedding built from runs of token ids and pre-projected image
// blocks, in decoder order.
struct EmbedSegment {
  std::vector<int> token_ids;  // used when block < 0
  NodeId block = -1;           // [n x d_model] node already in the graph

  static EmbedSegment tokens(std::vector<int> ids) { return {std::move(ids), -1}; }
  static EmbedSegment vision(NodeId node) { return {{}, node}; }
};

// Cross-attention input shared by every x-attn layer of one forward pass.
struct XAttnInput {
  NodeId kv = -1;                   // [kv_len x d_model]
  const BoolMatrix* mask = nullptr;  // [decoder_len x kv_len]
};

// Rows inside tag span k may attend only to kv block k (the thumbnail span
// maps to the last block); every other decoder row attends to all columns.
BoolMatrix build_x_mask(int decoder_len, int kv_blocks, int tokens_per_block,
                        const std::vector<TagSpan>& spans);

// Causal decoder with optional gated cross-attention layers after every
// xattn_every-th self-attention block. Backbone parameters live under
// "<prefix>." and cross-attention parameters under "<xattn_prefix>." so the
// training stages can freeze them independently.
class DecoderModel {
 public:
  DecoderModel(const ArchConfig& cfg, ParamStore& store, std::string prefix = "decoder",
               std::string xattn_prefix = "xattn");

  const ArchConfig& config() const { return cfg_; }

  // Token + learned-position embedding with vision blocks spliced in.
  NodeId embed_segments(Graph& g, GraphBinder& b, const std::vector<EmbedSegment>& segs) const;

  // Full decoder stack over pre-built input embeddings; xattn may be null
  // (text-only mode: cross-attention contributions absent).
  NodeId forward_embeds(Graph& g, GraphBinder& b, NodeId embeds,
                        const XAttnInput* xattn = nullptr) const;

  NodeId forward_text_only(Graph& g, GraphBinder& b, const std::vector<int>& ids) const;

 private:
  NodeId self_block(Graph& g, GraphBinder& b, NodeId x, int layer, const BoolMatrix& causal) const;
  NodeId xattn_layer(Graph& g, GraphBinder& b, NodeId x, int layer, const XAttnInput& in) const;

  ArchConfig cfg_;
  std::string prefix_;
  std::string xattn_prefix_;
};

}  // namespace nvlm
