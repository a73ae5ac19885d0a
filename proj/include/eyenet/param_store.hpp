#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "eyenet/errors.hpp"
#include "eyenet/tensor.hpp"

namespace eyenet {

// Named learnable tensors with gradient and Adam moment buffers. Iteration
// order is insertion order; the checkpoint format relies on it.
template <typename T = float>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor4<T> value;
    Tensor4<T> grad;
    Tensor4<T> m;
    Tensor4<T> v;
  };

  Entry& add(const std::string& name, Tensor4<T> value) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    const Shape s = value.shape();
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, std::move(value), Tensor4<T>(s), Tensor4<T>(s), Tensor4<T>(s)});
    return entries_.back();
  }

  const Entry* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  Entry* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  const Entry& at(const std::string& name) const {
    if (const Entry* e = find(name)) return *e;
    throw ContractError("unknown parameter '" + name + "'");
  }
  Entry& at(const std::string& name) {
    if (Entry* e = find(name)) return *e;
    throw ContractError("unknown parameter '" + name + "'");
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Total number of learnable scalars.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  // Adam step counter.
  std::uint64_t step = 0;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.step != b.step || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const Entry& x = a.entries_[i];
      const Entry& y = b.entries_[i];
      if (x.name != y.name || !(x.value == y.value) || !(x.m == y.m) || !(x.v == y.v)) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
std::size_t parameter_count(const ParamStore<T>& store) {
  return store.parameter_count();
}

}  // namespace eyenet
