#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace nvlm {

// Named parameter tensors with per-tensor trainable flags. Entries are kept
// in name order, so hashes and checkpoints do not depend on creation order.
class ParamStore {
 public:
  // Fails if the name already exists.
  Tensor& create(const std::string& name, std::vector<int> shape, bool trainable = true);
  // Normal(0, stdev) init drawn from a stream keyed by (name, seed), so the
  // values do not depend on what else was created before.
  Tensor& create_normal(const std::string& name, std::vector<int> shape, double stdev,
                        std::uint64_t seed, bool trainable = true);
  Tensor& create_full(const std::string& name, std::vector<int> shape, double value,
                      bool trainable = true);

  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);
  // Flips every parameter whose name starts with prefix; fails on no match.
  void set_trainable_prefix(const std::string& prefix, bool trainable);

  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // FNV-1a over names, shapes, and raw f64 bytes. Equal iff stores are
  // bitwise-identical, which is how frozen-parameter contracts are asserted.
  std::uint64_t hash() const;
  std::uint64_t hash(const std::string& name) const;

  // Flat little-endian checkpoint: per tensor name, shape, trainable flag,
  // then raw f64 data. See save() for the exact layout.
  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

 private:
  struct Entry {
    Tensor tensor;
    bool trainable = true;
  };
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::map<std::string, Entry> entries_;
};

}  // namespace nvlm
