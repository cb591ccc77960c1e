#include "core/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <utility>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace nvlm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'N', 'V', 'L', 'M', 'P', 'S', '0', '1'};

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_entry(std::uint64_t h, const std::string& name, const Tensor& t) {
  h = fnv1a(h, name.data(), name.size());
  for (int d : t.shape()) {
    auto d64 = static_cast<std::uint64_t>(d);
    h = fnv1a(h, &d64, sizeof d64);
  }
  return fnv1a(h, t.data().data(), t.data().size() * sizeof(double));
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape, bool trainable) {
  if (entries_.contains(name)) fail(ErrorCode::InvalidArgument, "duplicate parameter ", name);
  Entry e{Tensor::zeros(std::move(shape)), trainable};
  e.tensor.requires_grad = trainable;
  return entries_.emplace(name, std::move(e)).first->second.tensor;
}

Tensor& ParamStore::create_normal(const std::string& name, std::vector<int> shape, double stdev,
                                  std::uint64_t seed, bool trainable) {
  Tensor& t = create(name, std::move(shape), trainable);
  Rng rng(hash_name(name, seed));
  for (double& v : t.data()) v = rng.normal(0.0, stdev);
  return t;
}

Tensor& ParamStore::create_full(const std::string& name, std::vector<int> shape, double value,
                                bool trainable) {
  Tensor& t = create(name, std::move(shape), trainable);
  for (double& v : t.data()) v = value;
  return t;
}

bool ParamStore::contains(const std::string& name) const { return entries_.contains(name); }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter ", name);
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter ", name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) { return entry(name).tensor; }
const Tensor& ParamStore::get(const std::string& name) const { return entry(name).tensor; }

bool ParamStore::trainable(const std::string& name) const { return entry(name).trainable; }

void ParamStore::set_trainable(const std::string& name, bool trainable) {
  Entry& e = entry(name);
  e.trainable = trainable;
  e.tensor.requires_grad = trainable;
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool trainable) {
  bool hit = false;
  for (auto& [name, e] : entries_) {
    if (name.starts_with(prefix)) {
      e.trainable = trainable;
      e.tensor.requires_grad = trainable;
      hit = true;
    }
  }
  if (!hit) fail(ErrorCode::InvalidArgument, "no parameter starts with ", prefix);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_)
    if (name.starts_with(prefix)) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.tensor.data().size();
  return n;
}

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, e] : entries_) h = hash_entry(h, name, e.tensor);
  return h;
}

std::uint64_t ParamStore::hash(const std::string& name) const {
  return hash_entry(0xcbf29ce484222325ull, name, entry(name).tensor);
}

// Layout, all integers little-endian:
//   magic "NVLMPS01", u64 tensor count, then per tensor:
//   u32 name length, name bytes, u8 trainable, u32 ndim, i32 dims, f64 data.
void ParamStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write ", path);
  out.write(kMagic, sizeof kMagic);
  write_pod(out, static_cast<std::uint64_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<std::uint8_t>(e.trainable ? 1 : 0));
    write_pod(out, static_cast<std::uint32_t>(e.tensor.shape().size()));
    for (int d : e.tensor.shape()) write_pod(out, static_cast<std::int32_t>(d));
    out.write(reinterpret_cast<const char*>(e.tensor.data().data()),
              static_cast<std::streamsize>(e.tensor.data().size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::Io, "short write to ", path);
}

ParamStore ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open ", path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    fail(ErrorCode::Io, path, " is not a parameter checkpoint");
  ParamStore ps;
  auto count = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    bool trainable = read_pod<std::uint8_t>(in) != 0;
    auto ndim = read_pod<std::uint32_t>(in);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = read_pod<std::int32_t>(in);
    Tensor& t = ps.create(name, shape, trainable);
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    if (!in) fail(ErrorCode::Io, "truncated checkpoint ", path);
  }
  return ps;
}

}  // namespace nvlm
