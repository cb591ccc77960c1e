#include "core/decoder.hpp"

#include <numeric>

#include "core/error.hpp"

namespace nvlm {

void ArchConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || vocab <= 0 || max_seq <= 0 ||
      tokens_per_tile <= 0 || max_tiles <= 0)
    fail(ErrorCode::InvalidArgument, "arch config has a non-positive field");
  if (d_model % n_heads != 0)
    fail(ErrorCode::InvalidArgument, "d_model ", d_model, " not divisible by ", n_heads, " heads");
  if (xattn_every < 0 || n_xattn < 0)
    fail(ErrorCode::InvalidArgument, "negative cross-attention settings");
  if (has_xattn()) {
    if (n_layers % xattn_every != 0 || n_layers / xattn_every != n_xattn)
      fail(ErrorCode::InvalidArgument, "expected n_layers / xattn_every = n_xattn, got ", n_layers,
           " / ", xattn_every, " != ", n_xattn);
  } else if (n_xattn != 0) {
    fail(ErrorCode::InvalidArgument, "n_xattn is ", n_xattn, " but cross-attention is disabled");
  }
}

BoolMatrix build_x_mask(int decoder_len, int kv_blocks, int tokens_per_block,
                        const std::vector<TagSpan>& spans) {
  if (decoder_len < 0 || kv_blocks < 0 || tokens_per_block <= 0)
    fail(ErrorCode::InvalidArgument, "bad mask dimensions");
  BoolMatrix mask(decoder_len, kv_blocks * tokens_per_block, true);
  std::vector<std::uint8_t> claimed(static_cast<std::size_t>(decoder_len), 0);
  for (const TagSpan& s : spans) {
    if (s.begin < 0 || s.end > decoder_len || s.begin >= s.end)
      fail(ErrorCode::InvalidArgument, "tag span [", s.begin, ",", s.end, ") outside decoder");
    int block = s.tile == kThumbnail ? kv_blocks - 1 : s.tile;
    if (block < 0 || block >= kv_blocks)
      fail(ErrorCode::InvalidArgument, "tag span names kv block ", block, " of ", kv_blocks);
    for (int r = s.begin; r < s.end; ++r) {
      if (claimed[static_cast<std::size_t>(r)])
        fail(ErrorCode::InvalidArgument, "overlapping tag spans at position ", r);
      claimed[static_cast<std::size_t>(r)] = 1;
      for (int c = 0; c < mask.cols; ++c)
        mask.set(r, c, c >= block * tokens_per_block && c < (block + 1) * tokens_per_block);
    }
  }
  return mask;
}

DecoderModel::DecoderModel(const ArchConfig& cfg, ParamStore& store, std::string prefix,
                           std::string xattn_prefix)
    : cfg_(cfg), prefix_(std::move(prefix)), xattn_prefix_(std::move(xattn_prefix)) {
  cfg_.validate();
  if (store.contains(prefix_ + ".tok_embed")) return;  // reuse checkpointed parameters

  auto normal = [&](const std::string& name, std::vector<int> shape) {
    store.create_normal(name, std::move(shape), 0.02, cfg_.seed);
  };
  auto zeros = [&](const std::string& name, std::vector<int> shape) {
    store.create(name, std::move(shape));
  };
  auto ones = [&](const std::string& name, std::vector<int> shape) {
    store.create_full(name, std::move(shape), 1.0);
  };
  auto attn_params = [&](const std::string& base, int kv_width) {
    normal(base + ".wq", {cfg_.d_model, cfg_.d_model});
    normal(base + ".wk", {kv_width, cfg_.d_model});
    normal(base + ".wv", {kv_width, cfg_.d_model});
    normal(base + ".wo", {cfg_.d_model, cfg_.d_model});
    for (const char* m : {".bq", ".bk", ".bv", ".bo"}) zeros(base + m, {cfg_.d_model});
  };
  auto mlp_params = [&](const std::string& base) {
    normal(base + ".w1", {cfg_.d_model, 4 * cfg_.d_model});
    zeros(base + ".b1", {4 * cfg_.d_model});
    normal(base + ".w2", {4 * cfg_.d_model, cfg_.d_model});
    zeros(base + ".b2", {cfg_.d_model});
  };
  auto ln_params = [&](const std::string& base) {
    ones(base + ".g", {cfg_.d_model});
    zeros(base + ".b", {cfg_.d_model});
  };

  normal(prefix_ + ".tok_embed", {cfg_.vocab, cfg_.d_model});
  normal(prefix_ + ".pos_embed", {cfg_.max_seq, cfg_.d_model});
  for (int i = 0; i < cfg_.n_layers; ++i) {
    std::string base = prefix_ + ".layer" + std::to_string(i);
    ln_params(base + ".ln1");
    attn_params(base + ".attn", cfg_.d_model);
    ln_params(base + ".ln2");
    mlp_params(base + ".mlp");
  }
  ln_params(prefix_ + ".lnf");
  normal(prefix_ + ".head.w", {cfg_.d_model, cfg_.vocab});
  zeros(prefix_ + ".head.b", {cfg_.vocab});

  for (int j = 0; j < cfg_.n_xattn; ++j) {
    std::string base = xattn_prefix_ + ".layer" + std::to_string(j);
    ln_params(base + ".ln_attn");
    attn_params(base + ".attn", cfg_.d_model);
    zeros(base + ".gate_attn", {1});
    ln_params(base + ".ln_mlp");
    mlp_params(base + ".mlp");
    zeros(base + ".gate_mlp", {1});
  }
}

NodeId DecoderModel::embed_segments(Graph& g, GraphBinder& b,
                                    const std::vector<EmbedSegment>& segs) const {
  std::vector<NodeId> parts;
  int len = 0;
  for (const EmbedSegment& s : segs) {
    if (s.block >= 0) {
      const Tensor& t = g.value(s.block);
      if (t.cols() != cfg_.d_model)
        fail(ErrorCode::ShapeMismatch, "vision block width ", t.cols(), " != d_model ",
             cfg_.d_model);
      parts.push_back(s.block);
      len += t.rows();
    } else if (!s.token_ids.empty()) {
      parts.push_back(g.embed_rows(b[prefix_ + ".tok_embed"], s.token_ids));
      len += static_cast<int>(s.token_ids.size());
    }
  }
  if (parts.empty()) fail(ErrorCode::InvalidArgument, "empty sequence");
  if (len > cfg_.max_seq)
    fail(ErrorCode::InvalidArgument, "sequence length ", len, " exceeds max_seq ", cfg_.max_seq);
  NodeId x = parts.size() == 1 ? parts.front() : g.concat_rows(parts);
  std::vector<int> positions(static_cast<std::size_t>(len));
  std::iota(positions.begin(), positions.end(), 0);
  return g.add(x, g.embed_rows(b[prefix_ + ".pos_embed"], positions));
}

NodeId DecoderModel::self_block(Graph& g, GraphBinder& b, NodeId x, int layer,
                                const BoolMatrix& causal) const {
  std::string base = prefix_ + ".layer" + std::to_string(layer);
  AttentionNodes attn{b[base + ".attn.wq"], b[base + ".attn.bq"], b[base + ".attn.wk"],
                      b[base + ".attn.bk"], b[base + ".attn.wv"], b[base + ".attn.bv"],
                      b[base + ".attn.wo"], b[base + ".attn.bo"]};
  NodeId h = g.layer_norm(x, b[base + ".ln1.g"], b[base + ".ln1.b"]);
  x = g.add(x, multi_head_attention(g, h, h, cfg_.n_heads, attn, &causal));
  NodeId h2 = g.layer_norm(x, b[base + ".ln2.g"], b[base + ".ln2.b"]);
  NodeId m = g.add_bias(g.matmul(h2, b[base + ".mlp.w1"]), b[base + ".mlp.b1"]);
  m = g.add_bias(g.matmul(g.gelu(m), b[base + ".mlp.w2"]), b[base + ".mlp.b2"]);
  return g.add(x, m);
}

NodeId DecoderModel::xattn_layer(Graph& g, GraphBinder& b, NodeId x, int layer,
                                 const XAttnInput& in) const {
  std::string base = xattn_prefix_ + ".layer" + std::to_string(layer);
  AttentionNodes attn{b[base + ".attn.wq"], b[base + ".attn.bq"], b[base + ".attn.wk"],
                      b[base + ".attn.bk"], b[base + ".attn.wv"], b[base + ".attn.bv"],
                      b[base + ".attn.wo"], b[base + ".attn.bo"]};
  NodeId h = g.layer_norm(x, b[base + ".ln_attn.g"], b[base + ".ln_attn.b"]);
  NodeId a = multi_head_attention(g, h, in.kv, cfg_.n_heads, attn, in.mask);
  x = g.add(x, g.scale_by(a, g.tanh_of(b[base + ".gate_attn"])));
  NodeId h2 = g.layer_norm(x, b[base + ".ln_mlp.g"], b[base + ".ln_mlp.b"]);
  NodeId m = g.add_bias(g.matmul(h2, b[base + ".mlp.w1"]), b[base + ".mlp.b1"]);
  m = g.add_bias(g.matmul(g.gelu(m), b[base + ".mlp.w2"]), b[base + ".mlp.b2"]);
  return g.add(x, g.scale_by(m, g.tanh_of(b[base + ".gate_mlp"])));
}

NodeId DecoderModel::forward_embeds(Graph& g, GraphBinder& b, NodeId embeds,
                                    const XAttnInput* xattn) const {
  const Tensor& e = g.value(embeds);
  if (e.cols() != cfg_.d_model)
    fail(ErrorCode::ShapeMismatch, "embeddings width ", e.cols(), " != d_model ", cfg_.d_model);
  if (xattn && !cfg_.has_xattn())
    fail(ErrorCode::InvalidArgument, "cross-attention input on a decoder without x-attn layers");
  if (xattn && xattn->mask &&
      (xattn->mask->rows != e.rows() || xattn->mask->cols != g.value(xattn->kv).rows()))
    fail(ErrorCode::ShapeMismatch, "x-attn mask is ", xattn->mask->rows, "x", xattn->mask->cols,
         ", expected ", e.rows(), "x", g.value(xattn->kv).rows());

  BoolMatrix causal = BoolMatrix::causal(e.rows());
  NodeId x = embeds;
  int xi = 0;
  for (int i = 0; i < cfg_.n_layers; ++i) {
    x = self_block(g, b, x, i, causal);
    if (cfg_.has_xattn() && (i + 1) % cfg_.xattn_every == 0) {
      if (xattn) x = xattn_layer(g, b, x, xi, *xattn);
      ++xi;
    }
  }
  x = g.layer_norm(x, b[prefix_ + ".lnf.g"], b[prefix_ + ".lnf.b"]);
  return g.add_bias(g.matmul(x, b[prefix_ + ".head.w"]), b[prefix_ + ".head.b"]);
}

NodeId DecoderModel::forward_text_only(Graph& g, GraphBinder& b,
                                       const std::vector<int>& ids) const {
  return forward_embeds(g, b, embed_segments(g, b, {EmbedSegment::tokens(ids)}), nullptr);
}

}  // namespace nvlm
