#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "savipp/common.hpp"
#include "savipp/ndgrad/tensor.hpp"
#include "savipp/rng.hpp"

namespace savipp::model {

template <std::floating_point T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> value;
};

// Named parameter registry. Registration order is the canonical order for
// gradient aggregation and checkpoints, so it must be deterministic.
template <std::floating_point T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, Shape shape, std::vector<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    if (numel(shape) != static_cast<std::int64_t>(value.size()))
      throw DimensionError("parameter " + name + " init does not match " + shape_str(shape));
    index_[name] = params_.size();
    params_.push_back({name, std::move(shape), std::move(value)});
    return params_.size() - 1;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }
  Param<T>& at(std::size_t i) { return params_[i]; }
  const Param<T>& at(std::size_t i) const { return params_[i]; }
  Param<T>& at(const std::string& name) { return params_[index_of(name)]; }
  const Param<T>& at(const std::string& name) const { return params_[index_of(name)]; }
  std::size_t size() const { return params_.size(); }
  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.size());
    return n;
  }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-graph leaves over the store's values. Each parameter appears once per
// graph so fan-out gradients accumulate on a single node; stores are shared
// read-only across concurrently built graphs.
template <std::floating_point T>
class Binding {
 public:
  explicit Binding(const ParamStore<T>& store, bool trainable = true)
      : store_(&store), trainable_(trainable), leaves_(store.size()) {}

  ndgrad::Tensor<T> operator()(const std::string& name) {
    const std::size_t i = store_->index_of(name);
    if (!leaves_[i].defined()) {
      const auto& p = store_->at(i);
      leaves_[i] = ndgrad::Tensor<T>::leaf(p.shape, p.value, trainable_);
    }
    return leaves_[i];
  }

  // Gradients in registration order; zeros for parameters the graph did not
  // touch (e.g. a disabled decoder).
  std::vector<std::vector<T>> collect_grads() const {
    std::vector<std::vector<T>> grads(store_->size());
    for (std::size_t i = 0; i < store_->size(); ++i) {
      if (leaves_[i].defined() && leaves_[i].has_grad())
        grads[i] = leaves_[i].grad();
      else
        grads[i].assign(store_->at(i).value.size(), T(0));
    }
    return grads;
  }

 private:
  const ParamStore<T>* store_;
  bool trainable_;
  std::vector<ndgrad::Tensor<T>> leaves_;
};

// Initializers (deterministic in the rng stream).
template <std::floating_point T>
std::vector<T> he_normal(Rng& rng, std::int64_t n, std::int64_t fan_in) {
  std::vector<T> v(static_cast<std::size_t>(n));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, std));
  return v;
}

template <std::floating_point T>
std::vector<T> glorot_uniform(Rng& rng, std::int64_t n, std::int64_t fan_in,
                              std::int64_t fan_out) {
  std::vector<T> v(static_cast<std::size_t>(n));
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-lim, lim));
  return v;
}

template <std::floating_point T>
std::vector<T> constant_init(std::int64_t n, T value) {
  return std::vector<T>(static_cast<std::size_t>(n), value);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "SVCK", u64 config digest, u32 record count, then per
// record: u32 name length, name bytes, u32 rank, rank x u32 extents, fp32
// payload. Little endian throughout.
// ---------------------------------------------------------------------------

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store,
                     std::uint64_t config_digest) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint " + path.string() + " for writing");
  f.write("SVCK", 4);
  f.write(reinterpret_cast<const char*>(&config_digest), 8);
  const std::uint32_t count = static_cast<std::uint32_t>(store.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.at(i);
    const std::uint32_t len = static_cast<std::uint32_t>(p.name.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(p.name.data(), len);
    const std::uint32_t rank = static_cast<std::uint32_t>(p.shape.size());
    f.write(reinterpret_cast<const char*>(&rank), 4);
    for (auto d : p.shape) {
      const std::uint32_t e = static_cast<std::uint32_t>(d);
      f.write(reinterpret_cast<const char*>(&e), 4);
    }
    for (const T v : p.value) {
      const float x = static_cast<float>(v);
      f.write(reinterpret_cast<const char*>(&x), 4);
    }
  }
  if (!f) throw IoError("checkpoint write failed: " + path.string());
}

// Loads values into an existing store; names, shapes and the config digest
// must all match.
template <std::floating_point T>
void load_checkpoint(const std::filesystem::path& path, ParamStore<T>* store,
                     std::uint64_t expected_digest) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SVCK", 4) != 0)
    throw DataError("bad checkpoint magic in " + path.string());
  std::uint64_t digest = 0;
  f.read(reinterpret_cast<char*>(&digest), 8);
  if (digest != expected_digest)
    throw DataError("checkpoint config digest mismatch for " + path.string() +
                    "; the checkpoint was written with a different model config");
  std::uint32_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 4);
  if (count != store->size())
    throw DataError("checkpoint holds " + std::to_string(count) + " records, model has " +
                    std::to_string(store->size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    f.read(name.data(), len);
    std::uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 4);
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t e = 0;
      f.read(reinterpret_cast<char*>(&e), 4);
      d = e;
    }
    auto& p = store->at(name);
    if (p.shape != shape)
      throw DataError("checkpoint shape mismatch for " + name + ": " + shape_str(shape) +
                      " vs " + shape_str(p.shape));
    for (auto& v : p.value) {
      float x = 0;
      f.read(reinterpret_cast<char*>(&x), 4);
      v = static_cast<T>(x);
    }
  }
  if (!f) throw DataError("truncated checkpoint " + path.string());
}

// Names present in a checkpoint file (used to assert what a variant trained).
std::vector<std::string> checkpoint_record_names(const std::filesystem::path& path);

}  // namespace savipp::model
