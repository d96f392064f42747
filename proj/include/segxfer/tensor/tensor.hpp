#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "segxfer/error.hpp"

namespace segxfer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Cache-line aligned storage. Vectorised kernels peel differently depending on
/// where a buffer starts, so a fixed alignment keeps float results identical
/// from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tape;

/// Dense row-major array with an optional gradient buffer.
///
/// Copies are shallow: two Tensor handles may refer to the same storage, which
/// is how parameters, tape closures and callers share activations. Use clone()
/// for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), T{0});
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : Tensor(std::move(shape), std::span<const T>(data), requires_grad) {}

  Tensor(Shape shape, std::span<const T> data, bool requires_grad)
      : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    if (shape_numel(shape) != data.size()) {
      fail("tensor", "shape", "data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data.assign(data.begin(), data.end());
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl().shape; }
  std::size_t dim(std::size_t i) const { return impl().shape.at(i); }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<T> data() { return impl().data; }
  std::span<const T> data() const { return impl().data; }

  T item() const {
    if (numel() != 1) fail("tensor", "shape", "item() on tensor of shape " + shape_str(shape()));
    return impl().data[0];
  }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool flag) {
    impl().requires_grad = flag;
    if (!flag) impl().grad.clear();
  }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<T> grad() { return impl().grad; }
  std::span<const T> grad() const { return impl().grad; }

  /// Gradient buffer, zero-allocated on first use. Only valid for tensors that
  /// require gradients. Const because the handle, not the storage, is const:
  /// backward rules hold const copies of their inputs.
  std::span<T> grad_for_accumulation() const {
    if (!impl_) fail("tensor", "undefined", "use of an undefined tensor");
    Impl& m = *impl_;
    if (m.grad.empty()) m.grad.assign(m.data.size(), T{0});
    return m.grad;
  }

  void zero_grad() {
    auto& g = impl().grad;
    std::fill(g.begin(), g.end(), T{0});
  }
  void clear_grad() { impl().grad.clear(); }

  std::optional<std::size_t> node() const { return impl().node; }
  const void* tape_id() const { return impl().tape; }

  Tensor clone() const {
    return Tensor(shape(), data(), requires_grad());
  }

  /// Same values, off the tape, never receives gradient.
  Tensor detach() const { return Tensor(shape(), data(), false); }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data(), false);
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape<T>;

  struct Impl {
    Shape shape;
    AlignedVector<T> data;
    AlignedVector<T> grad;
    bool requires_grad = false;
    std::optional<std::size_t> node;
    const void* tape = nullptr;
  };

  static void check_shape(const Shape& shape) {
    if (shape.empty()) fail("tensor", "shape", "empty shape");
    for (auto e : shape) {
      if (e == 0) fail("tensor", "shape", "zero extent in shape " + shape_str(shape));
    }
  }

  Impl& impl() {
    if (!impl_) fail("tensor", "undefined", "use of an undefined tensor");
    return *impl_;
  }
  const Impl& impl() const {
    if (!impl_) fail("tensor", "undefined", "use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Operations are appended as they execute, so inputs always precede their
/// consumers. backward() walks the record once in reverse; gradients of
/// intermediate results are reset on every call while leaf gradients
/// accumulate across calls.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return ops_.size(); }

  /// True when the op producing an output must be recorded.
  bool wants(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording_) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
  }

  void record(Tensor<T>& output, std::function<void()> backward_rule) {
    auto& impl = output.impl();
    impl.requires_grad = true;
    impl.node = ops_.size();
    impl.tape = this;
    ops_.push_back(Op{output, std::move(backward_rule)});
  }

  void backward(Tensor<T>& root) {
    if (root.numel() != 1) {
      fail("tensor", "non_scalar_root", "backward() requires a scalar root, got shape " +
                                            shape_str(root.shape()));
    }
    if (!root.node() || root.tape_id() != this) {
      fail("tensor", "not_on_tape", "backward() root was not produced on this tape");
    }
    for (auto& op : ops_) op.output.clear_grad();
    root.grad_for_accumulation()[0] = T{1};
    for (std::size_t i = *root.node() + 1; i-- > 0;) {
      auto& op = ops_[i];
      if (!op.output.has_grad()) continue;
      op.backward();
    }
  }

  void clear() { ops_.clear(); }

 private:
  struct Op {
    Tensor<T> output;
    std::function<void()> backward;
  };

  bool recording_;
  std::vector<Op> ops_;
};

template <typename T>
void backward(Tape<T>& tape, Tensor<T>& root) {
  tape.backward(root);
}

}  // namespace segxfer
