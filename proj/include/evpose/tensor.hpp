#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace evpose::nd {

// Dense row-major N-d array participating in reverse-mode differentiation.
// Gradient storage is allocated lazily on first accumulation.
template <typename T>
struct TensorData {
  std::vector<int> shape;
  std::vector<T> v;
  std::vector<T> g;
  bool requires_grad = false;

  int64_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), int64_t{1},
                           std::multiplies<int64_t>());
  }
  bool has_grad() const { return !g.empty(); }
  void ensure_grad() {
    if (g.empty()) g.assign(v.size(), T{0});
  }
  void zero_grad() { g.assign(v.size(), T{0}); }
};

template <typename T>
using Tensor = std::shared_ptr<TensorData<T>>;

template <typename T>
Tensor<T> tensor(std::vector<int> shape, bool requires_grad = false) {
  auto t = std::make_shared<TensorData<T>>();
  t->shape = std::move(shape);
  for (int d : t->shape)
    if (d <= 0) throw std::invalid_argument("tensor: non-positive extent");
  t->v.assign(static_cast<size_t>(t->numel()), T{0});
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
Tensor<T> scalar_tensor(T value, bool requires_grad = false) {
  auto t = tensor<T>({1}, requires_grad);
  t->v[0] = value;
  return t;
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::string s = "[";
  for (size_t i = 0; i < t->shape.size(); ++i)
    s += (i ? "," : "") + std::to_string(t->shape[i]);
  return s + "]";
}

// Ordered record of executed operations. Backward replays the recorded
// closures in exact reverse execution order; fan-out accumulates
// additively because every closure adds into its inputs' grad buffers.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> back) { steps_.push_back(std::move(back)); }
  void clear() { steps_.clear(); }
  size_t size() const { return steps_.size(); }

  void run_backward() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

// Seeds d(loss)/d(loss) = 1 and propagates through the tape. Repeated
// calls without clearing grads keep accumulating.
template <typename T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  if (loss->numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss));
  loss->ensure_grad();
  loss->g[0] += T{1};
  tape.run_backward();
}

}  // namespace evpose::nd
