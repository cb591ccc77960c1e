#pragma once

#include <cstdint>
#include <string>

#include "core/autodiff.hpp"
#include "core/image.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"

namespace nvlm {

// TokenBlock::source value for the downsampled whole-image block.
inline constexpr int kThumbnail = -1;

// One tile's worth of vision tokens: a grid_h x grid_w grid flattened
// row-major into data rows.
struct TokenBlock {
  int grid_h = 0;
  int grid_w = 0;
  int channels = 0;
  int source = kThumbnail;  // 0-based tile index, or kThumbnail
  Tensor data;              // [grid_h*grid_w, channels]

  int token_count() const { return grid_h * grid_w; }
};

struct EncoderConfig {
  int tile_size = 32;
  int patch_size = 8;
  int in_channels = 1;
  int embed_dim = 16;
  int depth = 2;
  int heads = 2;
  std::uint64_t seed = kDefaultSeed;

  int grid() const { return tile_size / patch_size; }
  int token_count() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * in_channels; }
  void validate() const;
};

// Frozen patch encoder: patchify, linear embed, learned positions, `depth`
// pre-norm attention blocks, final norm. Parameters live in the store under
// `prefix` and are never trainable; encoding the same tile twice is
// bitwise-identical by construction.
class VisionEncoder {
 public:
  VisionEncoder(const EncoderConfig& cfg, ParamStore& store, std::string prefix = "vision");

  TokenBlock encode(const Image& tile, int source) const;

  const EncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  EncoderConfig cfg_;
  ParamStore* store_;
  std::string prefix_;
};

// Groups factor x factor token neighborhoods into single tokens by channel
// concatenation, ordered top-left, top-right, bottom-left, bottom-right for
// factor 2 (row-major within the neighborhood in general). Pure rearrangement.
TokenBlock pixel_shuffle(const TokenBlock& b, int factor = 2);
// Exact inverse of pixel_shuffle with the same factor.
TokenBlock pixel_unshuffle(const TokenBlock& b, int factor = 2);

// Two-layer position-wise MLP with GELU, used to land vision tokens in the
// decoder width. Token count is preserved.
struct ProjectorD {
  NodeId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
NodeId project_d(Graph& g, NodeId tokens, const ProjectorD& p);

// Single affine map used on the cross-attention path.
struct ProjectorX {
  NodeId w = -1, b = -1;
};
NodeId project_x(Graph& g, NodeId tokens, const ProjectorX& p);

}  // namespace nvlm
