#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "core/tensor.hpp"

namespace nvlm {

using NodeId = std::int32_t;

// Append-only op tape with reverse-mode differentiation. Ops execute eagerly;
// each records a closure that routes the output gradient to its inputs.
// Node inputs always have smaller ids, so insertion order is a topological
// order and backward is a single reverse sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  NodeId leaf(Tensor value);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  // --- elementwise / structural ---
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId scale_by(NodeId x, NodeId s);  // s is a scalar node
  NodeId add_bias(NodeId x, NodeId b);  // b broadcast over rows
  NodeId gelu(NodeId x);
  NodeId tanh_of(NodeId x);
  NodeId transpose(NodeId x);
  NodeId slice_rows(NodeId x, int begin, int end);
  NodeId slice_cols(NodeId x, int begin, int end);
  NodeId concat_rows(const std::vector<NodeId>& xs);
  NodeId concat_cols(const std::vector<NodeId>& xs);
  NodeId embed_rows(NodeId table, std::vector<int> ids);
  NodeId sum(NodeId x);

  // --- linear algebra / normalization ---
  NodeId matmul(NodeId a, NodeId b);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
  NodeId softmax_rows(NodeId x);
  // Disallowed pairs get -inf logits. Rows with no allowed column produce a
  // zero output row instead of NaN, so their attention contribution vanishes.
  NodeId masked_softmax_rows(NodeId x, const BoolMatrix& allowed);

  // Mean negative log-likelihood over masked-in rows of [T x V] logits.
  NodeId cross_entropy(NodeId logits, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& mask);

  // Reverse accumulation from a scalar loss. Gradients of leaves with
  // requires_grad stay readable until the next backward() call.
  void backward(NodeId loss);

  bool has_grad(NodeId id) const;
  const Tensor& grad(NodeId id) const;

 private:
  struct Node {
    Tensor value;
    bool needs_grad = false;
    // Routes d(out) into the grads of this node's inputs.
    std::function<void(Graph&, const Tensor&)> backprop;
  };

  NodeId push(Tensor value, bool needs_grad, std::function<void(Graph&, const Tensor&)> fn);
  bool needs(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  void accumulate(NodeId id, const Tensor& g);
  void check_2d(NodeId id, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;  // parallel to nodes_, filled during backward
};

}  // namespace nvlm
