#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evpose/rng.hpp"
#include "evpose/tensor.hpp"

namespace evpose::nd {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t worst_input = 0;
  int64_t worst_coord = -1;
};

// Central finite differences against tape gradients. `f` must rebuild its
// graph on the given tape from the current values of `inputs` and return a
// scalar. With max_coords_per_input >= 0 only a deterministic random
// subset of coordinates is probed per input.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>&)>& f,
                           std::span<const Tensor<T>> inputs, T eps,
                           int64_t max_coords_per_input = -1,
                           uint64_t subsample_seed = 1) {
  if (!(eps > T{0}))
    throw std::invalid_argument("grad_check: eps must be positive");

  for (const auto& in : inputs) in->zero_grad();
  {
    Tape<T> tape;
    auto loss = f(tape);
    if (loss->numel() != 1)
      throw std::invalid_argument("grad_check: function must be scalar");
    backward(tape, loss);
  }

  auto eval = [&]() -> T {
    Tape<T> tape;
    return f(tape)->v[0];
  };

  GradCheckReport report;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const auto& in = inputs[k];
    const int64_t n = in->numel();
    std::vector<int64_t> coords;
    if (max_coords_per_input < 0 || max_coords_per_input >= n) {
      coords.resize(n);
      for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng rng(derive_seed(subsample_seed, "gradcheck", k));
      for (int64_t i = 0; i < max_coords_per_input; ++i)
        coords.push_back(static_cast<int64_t>(rng.below(n)));
    }
    for (int64_t i : coords) {
      const T save = in->v[i];
      in->v[i] = save + eps;
      const double fp = static_cast<double>(eval());
      in->v[i] = save - eps;
      const double fm = static_cast<double>(eval());
      in->v[i] = save;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double analytic =
          in->has_grad() ? static_cast<double>(in->g[i]) : 0.0;
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = k;
        report.worst_coord = i;
      }
    }
  }
  return report;
}

}  // namespace evpose::nd
