#pragma once

// Dense tensors with a reverse-mode differentiation tape.
//
// A Tensor is a cheap handle onto shared storage. Leaf parameters carry a
// persistent gradient buffer; every other tensor produced while a Tape is
// active (and depending on something that requires a gradient) is recorded
// on that tape together with its backward rule. Tensors built from
// constants, or produced with no active tape, never get a node.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dams/error.hpp"

namespace dams {

#ifdef DAMS_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

template <class T>
class Tape;

namespace detail {

template <class T>
struct Storage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until needed
  bool requires_grad = false;
  std::optional<std::size_t> node;
  Tape<T>* tape = nullptr;
  std::vector<std::shared_ptr<Storage>> inputs;
  std::function<void(Storage&)> backward;

  std::span<T> ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;
  using StoragePtr = std::shared_ptr<detail::Storage<T>>;

  Tensor() = default;
  explicit Tensor(StoragePtr impl) : impl_(std::move(impl)) {}

  static Tensor constant(Shape shape, std::vector<T> values) {
    if (shape_size(shape) != values.size())
      fail(ErrorKind::usage, "tensor shape " + shape_str(shape) +
                                 " does not match " +
                                 std::to_string(values.size()) + " values");
    auto s = std::make_shared<detail::Storage<T>>();
    s->shape = std::move(shape);
    s->values = std::move(values);
    return Tensor(std::move(s));
  }

  static Tensor zeros(Shape shape) {
    std::vector<T> v(shape_size(shape), T(0));
    return constant(std::move(shape), std::move(v));
  }

  static Tensor scalar(T v) { return constant({1}, {v}); }

  /// Leaf that accumulates gradients across backward passes until cleared.
  static Tensor parameter(Shape shape, std::vector<T> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.impl_->requires_grad = true;
    t.impl_->ensure_grad();
    return t;
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t cols() const { return impl_->shape.empty() ? 1 : impl_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<const T> values() const { return impl_->values; }
  std::span<T> mutable_values() { return impl_->values; }
  T operator[](std::size_t i) const { return impl_->values[i]; }
  T at(std::size_t r, std::size_t c) const { return impl_->values[r * cols() + c]; }
  T item() const {
    if (size() != 1) fail(ErrorKind::usage, "item() on non-scalar tensor " + shape_str(shape()));
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->values.size() && !impl_->values.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->values.size(), T(0));
  }
  std::optional<std::size_t> node() const { return impl_->node; }

  /// Same values, fresh constant storage; cuts the tape.
  Tensor detach() const { return constant(shape(), impl_->values); }

  const StoragePtr& impl() const { return impl_; }

 private:
  StoragePtr impl_;
};

/// Ordered record of differentiable operations for one forward pass.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { clear(); }

  std::size_t size() const { return nodes_.size(); }

  void record(const std::shared_ptr<detail::Storage<T>>& s) {
    s->node = nodes_.size();
    s->tape = this;
    s->requires_grad = true;
    nodes_.push_back(s);
  }

  /// Reverse sweep from a scalar node. Parameter gradients accumulate.
  void backward(const Tensor<T>& loss) {
    const auto& li = loss.impl();
    if (!li || !li->node || li->tape != this)
      fail(ErrorKind::usage, "backward: loss is not recorded on this tape");
    if (li->values.size() != 1)
      fail(ErrorKind::usage, "backward: loss must be a scalar, got " + shape_str(li->shape));
    li->ensure_grad()[0] += T(1);
    for (std::size_t i = *li->node + 1; i-- > 0;) {
      auto& n = *nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(n);
    }
  }

  /// Drops recorded nodes; tensors that escaped become constants.
  void clear() {
    for (auto& n : nodes_) {
      n->node.reset();
      n->tape = nullptr;
      n->backward = nullptr;
      n->inputs.clear();
      n->grad.clear();
      n->requires_grad = false;
    }
    nodes_.clear();
  }

  static Tape* active() { return active_; }

 private:
  template <class>
  friend class TapeScope;
  static inline thread_local Tape* active_ = nullptr;
  std::vector<std::shared_ptr<detail::Storage<T>>> nodes_;
};

/// Makes a tape the recording target for the current thread.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~TapeScope() { Tape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  const auto& li = loss.impl();
  if (!li || !li->tape) fail(ErrorKind::usage, "backward: loss is not recorded on a tape");
  li->tape->backward(loss);
}

namespace detail {

/// Builds an op output and records it when any input needs a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<std::shared_ptr<Storage<T>>> inputs,
                      std::function<void(Storage<T>&)> backward) {
  Tensor<T> out = Tensor<T>::constant(std::move(shape), std::move(values));
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (!needs) return out;
  auto& s = *out.impl();
  s.inputs = std::move(inputs);
  s.backward = std::move(backward);
  tape->record(out.impl());
  return out;
}

/// Gradient buffer of an input, or empty when the input is a constant.
template <class T>
std::span<T> grad_of(Storage<T>& s) {
  if (!s.requires_grad) return {};
  return s.ensure_grad();
}

}  // namespace detail
}  // namespace dams
