#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "longscape/common.hpp"

namespace longscape {

using Shape = std::vector<int64_t>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

inline void validate_shape(const Shape& s) {
  check(!s.empty(), "tensor shape must have at least one extent");
  for (int64_t d : s) check(d >= 1, "tensor extents must be >= 1, got ", shape_str(s));
}

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> v;
};

template <typename T>
class Tape;

namespace detail {
template <typename T>
struct OpBuilder;
}

// Shared-storage tensor handle. A tensor created while a tape is recording (and
// fed by at least one tracked operand) carries a node id into that tape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) {
    validate_shape(shape);
    int64_t n = shape_size(shape);
    data_ = std::make_shared<TensorData<T>>(
        TensorData<T>{std::move(shape), std::vector<T>(static_cast<size_t>(n), fill)});
  }

  Tensor(Shape shape, std::vector<T> values) {
    validate_shape(shape);
    check(shape_size(shape) == static_cast<int64_t>(values.size()),
          "value count ", values.size(), " does not match shape ", shape_str(shape));
    data_ = std::make_shared<TensorData<T>>(TensorData<T>{std::move(shape), std::move(values)});
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  int64_t rank() const { return static_cast<int64_t>(data_->shape.size()); }
  int64_t dim(int64_t i) const { return data_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_->v.size()); }
  T* data() { return data_->v.data(); }
  const T* data() const { return data_->v.data(); }
  std::vector<T>& values() { return data_->v; }
  const std::vector<T>& values() const { return data_->v; }

  T item() const {
    check(defined() && size() == 1, "item() requires a scalar tensor");
    return data_->v[0];
  }

  bool tracked() const { return tape_ != nullptr && node_ >= 0; }
  Tape<T>* tape() const { return tape_; }
  int64_t node() const { return node_; }

  // Same storage, no tape linkage.
  Tensor detached() const {
    Tensor t;
    t.data_ = data_;
    return t;
  }

  // Deep copy, untracked.
  Tensor clone() const {
    Tensor t;
    if (data_) t.data_ = std::make_shared<TensorData<T>>(*data_);
    return t;
  }

 private:
  friend class Tape<T>;
  template <typename U>
  friend struct detail::OpBuilder;

  std::shared_ptr<TensorData<T>> data_;
  Tape<T>* tape_ = nullptr;
  int64_t node_ = -1;
};

// Reverse-mode tape. Records one node per primitive op in creation order
// (inputs always precede their consumers). Backward rules are expressed with
// the public op catalog, so running gradient() with create_graph=true records
// the backward pass itself and makes nested differentiation possible.
template <typename T>
class Tape {
 public:
  // grads aligned with the node's inputs; entries for inputs whose `needed`
  // flag is false may be left undefined.
  using BackwardFn =
      std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out, const std::vector<char>& needed)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf whose gradient may later be requested.
  Tensor<T> watch(const Tensor<T>& t) {
    check(t.defined(), "watch: undefined tensor");
    Tensor<T> leaf;
    leaf.data_ = t.data_;
    leaf.tape_ = this;
    leaf.node_ = static_cast<int64_t>(nodes_.size());
    nodes_.push_back(Node{{}, nullptr});
    return leaf;
  }

  bool recording() const { return recording_; }
  size_t node_count() const { return nodes_.size(); }

  // d(loss)/d(target) for every target, in order. Unreached targets yield zero
  // tensors. With create_graph=true the returned gradients are themselves
  // recorded and can be differentiated again.
  std::vector<Tensor<T>> gradient(const Tensor<T>& loss, const std::vector<Tensor<T>>& targets,
                                  bool create_graph = false);

 private:
  template <typename U>
  friend struct detail::OpBuilder;

  struct Node {
    std::vector<int64_t> inputs;
    BackwardFn backward;  // null for leaves
  };

  std::vector<Node> nodes_;
  bool recording_ = true;
};

namespace detail {

// Binds the result of a primitive op onto the operands' tape. `make_backward`
// receives the bound output handle so backward rules may capture it.
template <typename T>
struct OpBuilder {
  template <typename MakeBackward>
  static Tensor<T> finish(Tensor<T> out, std::initializer_list<const Tensor<T>*> ins,
                          MakeBackward&& make_backward) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* in : ins) {
      if (!in->tracked()) continue;
      if (tape == nullptr)
        tape = in->tape_;
      else
        check(tape == in->tape_, "operands are recorded on different tapes");
    }
    if (tape == nullptr || !tape->recording_) return out;
    std::vector<int64_t> ids;
    ids.reserve(ins.size());
    for (const Tensor<T>* in : ins) ids.push_back(in->tracked() ? in->node_ : -1);
    return finish_dynamic(std::move(out), tape, std::move(ids),
                          std::forward<MakeBackward>(make_backward));
  }

  // Same binding, for ops with a runtime-sized input list. Caller has already
  // verified recording is active on `tape`.
  template <typename MakeBackward>
  static Tensor<T> finish_dynamic(Tensor<T> out, Tape<T>* tape, std::vector<int64_t> ids,
                                  MakeBackward&& make_backward) {
    out.tape_ = tape;
    out.node_ = static_cast<int64_t>(tape->nodes_.size());
    tape->nodes_.push_back(typename Tape<T>::Node{std::move(ids), nullptr});
    tape->nodes_.back().backward = make_backward(static_cast<const Tensor<T>&>(out));
    return out;
  }
};

}  // namespace detail

template <typename T>
Tensor<T> zeros(Shape shape) {
  return Tensor<T>(std::move(shape), T(0));
}

template <typename T>
Tensor<T> ones(Shape shape) {
  return Tensor<T>(std::move(shape), T(1));
}

template <typename T>
Tensor<T> full(Shape shape, T v) {
  return Tensor<T>(std::move(shape), v);
}

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double std_dev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.normal() * std_dev);
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace longscape
