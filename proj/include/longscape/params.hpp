#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "longscape/ops.hpp"

namespace longscape {

// Named, ordered collection of learnable tensors with per-parameter Adam state.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
  };

  Tensor<T>& declare(const std::string& name, Shape shape) {
    check(map_.find(name) == map_.end(), "parameter '", name, "' declared twice");
    Entry e;
    e.value = Tensor<T>(shape, T(0));
    e.grad = Tensor<T>(shape, T(0));
    e.m = Tensor<T>(shape, T(0));
    e.v = Tensor<T>(shape, T(0));
    order_.push_back(name);
    auto [it, ok] = map_.emplace(name, std::move(e));
    (void)ok;
    return it->second.value;
  }

  bool has(const std::string& name) const { return map_.find(name) != map_.end(); }

  Entry& entry(const std::string& name) {
    auto it = map_.find(name);
    check(it != map_.end(), "unknown parameter '", name, "'");
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = map_.find(name);
    check(it != map_.end(), "unknown parameter '", name, "'");
    return it->second;
  }

  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& name : order_) n += map_.at(name).value.size();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> map_;
};

// Per-step view of a store: tracked handles when a tape is given (training),
// plain detached handles otherwise (inference / frozen nets).
template <typename T>
struct TapedParams {
  Tape<T>* tape = nullptr;
  std::unordered_map<std::string, Tensor<T>> handles;

  const Tensor<T>& operator[](const std::string& name) const {
    auto it = handles.find(name);
    check(it != handles.end(), "unknown parameter '", name, "'");
    return it->second;
  }
};

template <typename T>
TapedParams<T> make_taped(ParamStore<T>& store, Tape<T>* tape) {
  TapedParams<T> tp;
  tp.tape = tape;
  for (const auto& name : store.names()) {
    auto& v = store.value(name);
    tp.handles.emplace(name, tape ? tape->watch(v) : v.detached());
  }
  return tp;
}

template <typename T>
TapedParams<T> frozen_view(const ParamStore<T>& store) {
  TapedParams<T> tp;
  for (const auto& name : store.names()) tp.handles.emplace(name, store.value(name).detached());
  return tp;
}

template <typename T>
TapedParams<T> frozen_view(ParamStore<T>& store) {
  return frozen_view(static_cast<const ParamStore<T>&>(store));
}

// d(loss)/d(every parameter), keyed by name. Parameters the loss never touched
// come back as zero tensors.
template <typename T>
std::map<std::string, Tensor<T>> backward(const Tensor<T>& loss, ParamStore<T>& store,
                                          const TapedParams<T>& params) {
  check(params.tape != nullptr, "backward: params view has no tape");
  std::vector<Tensor<T>> targets;
  targets.reserve(store.size());
  for (const auto& name : store.names()) targets.push_back(params[name]);
  auto grads = params.tape->gradient(loss, targets);
  std::map<std::string, Tensor<T>> out;
  for (size_t i = 0; i < store.names().size(); ++i) out.emplace(store.names()[i], grads[i]);
  return out;
}

}  // namespace longscape
