#pragma once

#include <map>
#include <string>

#include "core/autodiff.hpp"
#include "core/params.hpp"

namespace nvlm {

// Binds store parameters into one graph, one leaf per name. The optimizer
// walks bound() afterwards to pair each parameter with its gradient node.
class GraphBinder {
 public:
  GraphBinder(Graph& g, const ParamStore& ps) : g_(&g), ps_(&ps) {}

  NodeId operator[](const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    NodeId id = g_->leaf(ps_->get(name));
    ids_.emplace(name, id);
    return id;
  }

  const std::map<std::string, NodeId>& bound() const { return ids_; }

 private:
  Graph* g_;
  const ParamStore* ps_;
  std::map<std::string, NodeId> ids_;
};

}  // namespace nvlm
