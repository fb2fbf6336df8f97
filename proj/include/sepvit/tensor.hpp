#pragma once

#include <memory>
#include <type_traits>
#include <vector>

#include "sepvit/common.hpp"
#include "sepvit/rng.hpp"

namespace sepvit {

/// Dense row-major N-d array. The object is a cheap handle onto shared
/// storage; ops treat tensors as immutable values and produce fresh outputs,
/// while backward rules accumulate into the shared grad buffer.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires float or double");

 public:
  Tensor() : store_(std::make_shared<Store>()) {}

  explicit Tensor(Shape shape) : store_(std::make_shared<Store>()) {
    store_->shape = std::move(shape);
    store_->values.assign(numel(store_->shape), T(0));
  }

  Tensor(Shape shape, T fill) : store_(std::make_shared<Store>()) {
    store_->shape = std::move(shape);
    store_->values.assign(numel(store_->shape), fill);
  }

  static Tensor from_data(Shape shape, std::vector<T> values) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.store_->shape = std::move(shape);
    t.store_->values = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from_data({1}, {v}); }

  const Shape& shape() const { return store_->shape; }
  std::size_t rank() const { return store_->shape.size(); }
  std::size_t dim(std::size_t i) const { return store_->shape[i]; }
  std::size_t size() const { return store_->values.size(); }

  T* data() { return store_->values.data(); }
  const T* data() const { return store_->values.data(); }
  std::vector<T>& values() { return store_->values; }
  const std::vector<T>& values() const { return store_->values; }

  T item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return store_->values[0];
  }

  bool requires_grad() const { return store_->requires_grad; }
  void set_requires_grad(bool b) const { store_->requires_grad = b; }

  // True once a recorded op produced this tensor from a grad-carrying input.
  bool on_graph() const { return store_->on_graph; }
  void mark_on_graph() const { store_->on_graph = true; }
  bool needs_grad() const { return store_->requires_grad || store_->on_graph; }

  bool has_grad() const { return !store_->grad.empty(); }

  /// Grad buffer, allocated (zeroed) on first access. Same shape as data.
  std::vector<T>& grad() const {
    if (store_->grad.empty()) store_->grad.assign(store_->values.size(), T(0));
    return store_->grad;
  }

  void zero_grad() const { store_->grad.clear(); }

  /// Identity of the underlying storage (distinguishes views of one buffer).
  const void* storage_id() const { return store_.get(); }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& v : store_->values) v = static_cast<T>(rng.uniform(lo, hi));
  }

 private:
  struct Store {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until touched
    bool requires_grad = false;
    bool on_graph = false;
  };
  std::shared_ptr<Store> store_;
};

}  // namespace sepvit
