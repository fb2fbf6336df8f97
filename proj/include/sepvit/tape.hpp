#pragma once

#include <functional>
#include <vector>

#include "sepvit/common.hpp"
#include "sepvit/tensor.hpp"

namespace sepvit {

/// Reverse-mode tape. Ops append their backward rules in execution order,
/// which is a topological order of the computation graph by construction;
/// backward() replays the rules once, in reverse, accumulating (summing)
/// into the grad buffer of every tensor on the recorded graph.
///
/// Contract: one backward() per recorded forward. The tape object itself is
/// reusable — clear() it, zero the parameter grads, and record the next
/// forward (the training loop does exactly this each step).
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }

  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() { nodes_.clear(); }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

}  // namespace sepvit
