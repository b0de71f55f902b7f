#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "evpose/rng.hpp"
#include "evpose/tensor.hpp"

namespace evpose::nd {

template <typename T>
struct Param {
  Tensor<T> value;
  std::vector<T> m;  // Adam first moment
  std::vector<T> v;  // Adam second moment
};

// Named parameter tensors with optimizer state. Registration order is the
// canonical iteration order everywhere (updates, checkpoints), which keeps
// runs reproducible.
template <typename T>
class ParamSet {
 public:
  Tensor<T> add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name))
      throw std::invalid_argument("ParamSet: duplicate name " + name);
    Param<T> p;
    p.value = tensor<T>(std::move(shape), /*requires_grad=*/true);
    p.m.assign(p.value->v.size(), T{0});
    p.v.assign(p.value->v.size(), T{0});
    index_[name] = params_.size();
    names_.push_back(name);
    params_.push_back(std::move(p));
    return params_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Param<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("ParamSet: unknown name " + name);
    return params_[it->second];
  }
  const Param<T>& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return params_.size(); }
  Param<T>& operator[](size_t i) { return params_[i]; }
  const Param<T>& operator[](size_t i) const { return params_[i]; }

  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t s) { step_count_ = s; }
  void bump_step() { ++step_count_; }

  void zero_grad() {
    for (auto& p : params_) p.value->zero_grad();
  }

  int64_t total_param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value->numel();
    return n;
  }

 private:
  std::vector<Param<T>> params_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, size_t> index_;
  int64_t step_count_ = 0;
};

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Bias-corrected Adam with decoupled weight decay (decay applied directly
// to the weights, not mixed into the moments).
template <typename T>
void adam_step(ParamSet<T>& params, const AdamConfig& cfg) {
  params.bump_step();
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T c1 =
      T{1} - static_cast<T>(std::pow(cfg.beta1, double(params.step_count())));
  const T c2 =
      T{1} - static_cast<T>(std::pow(cfg.beta2, double(params.step_count())));
  for (size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = params[i];
    if (!p.value->has_grad())
      throw std::runtime_error("adam_step: gradient missing for " +
                               params.names()[i]);
    T* w = p.value->v.data();
    const T* g = p.value->g.data();
    for (size_t j = 0; j < p.value->v.size(); ++j) {
      p.m[j] = b1 * p.m[j] + (T{1} - b1) * g[j];
      p.v[j] = b2 * p.v[j] + (T{1} - b2) * g[j] * g[j];
      const T mhat = p.m[j] / c1;
      const T vhat = p.v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps) + lr * wd * w[j];
    }
  }
}

// Convolution weights start uniform in +-1/sqrt(fan_in); biases start at
// zero unless a caller overrides them (the ConvLSTM forget gate does).
template <typename T>
void init_uniform_fanin(const Tensor<T>& w, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& x : w->v) x = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace evpose::nd
