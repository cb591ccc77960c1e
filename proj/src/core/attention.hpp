#pragma once

#include "core/autodiff.hpp"

namespace nvlm {

// Projection parameters for one attention layer, already bound into a graph.
struct AttentionNodes {
  NodeId wq = -1, bq = -1;
  NodeId wk = -1, bk = -1;
  NodeId wv = -1, bv = -1;
  NodeId wo = -1, bo = -1;
};

// Scaled dot-product attention over n_heads column slices. q_in is [Tq x d],
// kv_in is [Tkv x d_kv]; the result is [Tq x d]. mask, when given, is
// [Tq x Tkv] with true marking attendable pairs; rows with no allowed column
// contribute nothing (zero attention output).
NodeId multi_head_attention(Graph& g, NodeId q_in, NodeId kv_in, int n_heads,
                            const AttentionNodes& p, const BoolMatrix* mask = nullptr);

}  // namespace nvlm
