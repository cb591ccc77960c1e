#include "core/attention.hpp"

#include <cmath>

#include "core/error.hpp"

namespace nvlm {

NodeId multi_head_attention(Graph& g, NodeId q_in, NodeId kv_in, int n_heads,
                            const AttentionNodes& p, const BoolMatrix* mask) {
  NodeId q = g.add_bias(g.matmul(q_in, p.wq), p.bq);
  NodeId k = g.add_bias(g.matmul(kv_in, p.wk), p.bk);
  NodeId v = g.add_bias(g.matmul(kv_in, p.wv), p.bv);

  int width = g.value(q).cols();
  if (width != g.value(k).cols() || width != g.value(v).cols())
    fail(ErrorCode::ShapeMismatch, "attention projections disagree on width ", width);
  if (n_heads <= 0 || width % n_heads != 0)
    fail(ErrorCode::InvalidArgument, "width ", width, " not divisible by ", n_heads, " heads");
  int head_dim = width / n_heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<NodeId> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    int lo = h * head_dim, hi = lo + head_dim;
    NodeId qh = g.slice_cols(q, lo, hi);
    NodeId kh = g.slice_cols(k, lo, hi);
    NodeId vh = g.slice_cols(v, lo, hi);
    NodeId scores = g.scale(g.matmul(qh, g.transpose(kh)), scale);
    NodeId attn = mask ? g.masked_softmax_rows(scores, *mask) : g.softmax_rows(scores);
    heads.push_back(g.matmul(attn, vh));
  }
  NodeId merged = n_heads == 1 ? heads.front() : g.concat_cols(heads);
  return g.add_bias(g.matmul(merged, p.wo), p.bo);
}

}  // namespace nvlm
