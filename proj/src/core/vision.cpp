#include "core/vision.hpp"

#include <utility>

#include "core/attention.hpp"
#include "core/error.hpp"

namespace nvlm {

void EncoderConfig::validate() const {
  if (tile_size <= 0 || patch_size <= 0 || in_channels <= 0 || embed_dim <= 0 || depth < 0 ||
      heads <= 0)
    fail(ErrorCode::InvalidArgument, "encoder config has a non-positive field");
  if (tile_size % patch_size != 0)
    fail(ErrorCode::InvalidArgument, "tile size ", tile_size, " not divisible by patch size ",
         patch_size);
  if (embed_dim % heads != 0)
    fail(ErrorCode::InvalidArgument, "embed dim ", embed_dim, " not divisible by ", heads,
         " heads");
}

VisionEncoder::VisionEncoder(const EncoderConfig& cfg, ParamStore& store, std::string prefix)
    : cfg_(cfg), store_(&store), prefix_(std::move(prefix)) {
  cfg_.validate();
  if (store.contains(prefix_ + ".embed.w")) return;  // reuse checkpointed parameters

  auto normal = [&](const std::string& name, std::vector<int> shape) {
    store.create_normal(prefix_ + "." + name, std::move(shape), 0.02, cfg_.seed, false);
  };
  auto zeros = [&](const std::string& name, std::vector<int> shape) {
    store.create(prefix_ + "." + name, std::move(shape), false);
  };
  auto ones = [&](const std::string& name, std::vector<int> shape) {
    store.create_full(prefix_ + "." + name, std::move(shape), 1.0, false);
  };

  normal("embed.w", {cfg_.patch_dim(), cfg_.embed_dim});
  zeros("embed.b", {cfg_.embed_dim});
  normal("pos", {cfg_.token_count(), cfg_.embed_dim});
  for (int i = 0; i < cfg_.depth; ++i) {
    std::string b = "block" + std::to_string(i) + ".";
    ones(b + "ln1.g", {cfg_.embed_dim});
    zeros(b + "ln1.b", {cfg_.embed_dim});
    for (const char* m : {"wq", "wk", "wv", "wo"}) normal(b + "attn." + m, {cfg_.embed_dim, cfg_.embed_dim});
    for (const char* m : {"bq", "bk", "bv", "bo"}) zeros(b + "attn." + m, {cfg_.embed_dim});
    ones(b + "ln2.g", {cfg_.embed_dim});
    zeros(b + "ln2.b", {cfg_.embed_dim});
    normal(b + "mlp.w1", {cfg_.embed_dim, 4 * cfg_.embed_dim});
    zeros(b + "mlp.b1", {4 * cfg_.embed_dim});
    normal(b + "mlp.w2", {4 * cfg_.embed_dim, cfg_.embed_dim});
    zeros(b + "mlp.b2", {cfg_.embed_dim});
  }
  ones("lnf.g", {cfg_.embed_dim});
  zeros("lnf.b", {cfg_.embed_dim});
}

TokenBlock VisionEncoder::encode(const Image& tile, int source) const {
  if (tile.width != cfg_.tile_size || tile.height != cfg_.tile_size)
    fail(ErrorCode::ShapeMismatch, "tile is ", tile.width, "x", tile.height, ", encoder expects ",
         cfg_.tile_size, "x", cfg_.tile_size);
  if (tile.channels != cfg_.in_channels)
    fail(ErrorCode::ShapeMismatch, "tile has ", tile.channels, " channels, encoder expects ",
         cfg_.in_channels);

  // Patch pixels in (y, x, channel) order, patches row-major; values mapped
  // from 0..255 to [-1, 1].
  int grid = cfg_.grid();
  Tensor patches({cfg_.token_count(), cfg_.patch_dim()});
  for (int pr = 0; pr < grid; ++pr)
    for (int pc = 0; pc < grid; ++pc) {
      int row = pr * grid + pc;
      int j = 0;
      for (int y = 0; y < cfg_.patch_size; ++y)
        for (int x = 0; x < cfg_.patch_size; ++x)
          for (int c = 0; c < cfg_.in_channels; ++c)
            patches.at(row, j++) =
                tile.at(pc * cfg_.patch_size + x, pr * cfg_.patch_size + y, c) / 127.5 - 1.0;
    }

  Graph g;
  auto p = [&](const std::string& name) { return g.leaf(store_->get(prefix_ + "." + name)); };

  NodeId x = g.add(g.add_bias(g.matmul(g.leaf(std::move(patches)), p("embed.w")), p("embed.b")),
                   p("pos"));
  for (int i = 0; i < cfg_.depth; ++i) {
    std::string b = "block" + std::to_string(i) + ".";
    AttentionNodes attn{p(b + "attn.wq"), p(b + "attn.bq"), p(b + "attn.wk"), p(b + "attn.bk"),
                        p(b + "attn.wv"), p(b + "attn.bv"), p(b + "attn.wo"), p(b + "attn.bo")};
    NodeId h = g.layer_norm(x, p(b + "ln1.g"), p(b + "ln1.b"));
    x = g.add(x, multi_head_attention(g, h, h, cfg_.heads, attn));
    NodeId h2 = g.layer_norm(x, p(b + "ln2.g"), p(b + "ln2.b"));
    NodeId m = g.add_bias(g.matmul(h2, p(b + "mlp.w1")), p(b + "mlp.b1"));
    m = g.add_bias(g.matmul(g.gelu(m), p(b + "mlp.w2")), p(b + "mlp.b2"));
    x = g.add(x, m);
  }
  x = g.layer_norm(x, p("lnf.g"), p("lnf.b"));

  return TokenBlock{grid, grid, cfg_.embed_dim, source, g.value(x)};
}

TokenBlock pixel_shuffle(const TokenBlock& b, int factor) {
  if (factor < 1) fail(ErrorCode::InvalidArgument, "pixel shuffle factor must be positive");
  if (b.grid_h % factor != 0 || b.grid_w % factor != 0)
    fail(ErrorCode::ShapeMismatch, "grid ", b.grid_h, "x", b.grid_w, " not divisible by factor ",
         factor);
  TokenBlock out;
  out.grid_h = b.grid_h / factor;
  out.grid_w = b.grid_w / factor;
  out.channels = b.channels * factor * factor;
  out.source = b.source;
  out.data = Tensor({out.token_count(), out.channels});
  for (int r = 0; r < out.grid_h; ++r)
    for (int c = 0; c < out.grid_w; ++c) {
      int row = r * out.grid_w + c;
      int slot = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          int src = (r * factor + dy) * b.grid_w + (c * factor + dx);
          for (int ch = 0; ch < b.channels; ++ch)
            out.data.at(row, slot * b.channels + ch) = b.data.at(src, ch);
          ++slot;
        }
    }
  return out;
}

TokenBlock pixel_unshuffle(const TokenBlock& b, int factor) {
  if (factor < 1) fail(ErrorCode::InvalidArgument, "pixel shuffle factor must be positive");
  if (b.channels % (factor * factor) != 0)
    fail(ErrorCode::ShapeMismatch, "channel count ", b.channels, " not divisible by factor^2");
  TokenBlock out;
  out.grid_h = b.grid_h * factor;
  out.grid_w = b.grid_w * factor;
  out.channels = b.channels / (factor * factor);
  out.source = b.source;
  out.data = Tensor({out.token_count(), out.channels});
  for (int r = 0; r < b.grid_h; ++r)
    for (int c = 0; c < b.grid_w; ++c) {
      int row = r * b.grid_w + c;
      int slot = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          int dst = (r * factor + dy) * out.grid_w + (c * factor + dx);
          for (int ch = 0; ch < out.channels; ++ch)
            out.data.at(dst, ch) = b.data.at(row, slot * out.channels + ch);
          ++slot;
        }
    }
  return out;
}

NodeId project_d(Graph& g, NodeId tokens, const ProjectorD& p) {
  NodeId h = g.gelu(g.add_bias(g.matmul(tokens, p.w1), p.b1));
  return g.add_bias(g.matmul(h, p.w2), p.b2);
}

NodeId project_x(Graph& g, NodeId tokens, const ProjectorX& p) {
  return g.add_bias(g.matmul(tokens, p.w), p.b);
}

}  // namespace nvlm
