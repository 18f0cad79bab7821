#pragma once

#include <cstddef>
#include <vector>

#include "btx/core/param.hpp"

namespace btx {

struct AdamConfig {
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 4000;
  // Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;
};

// Linear warmup to base_lr over warmup_steps, then inverse-sqrt decay.
// `step` is 1-based (the step about to be applied).
double scheduled_lr(const AdamConfig& cfg, std::size_t step);

// Adam with bias correction. Moments are kept per parameter in store order;
// the store must not gain or lose parameters between steps.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update from the populated gradients, then zeroes them.
  // Throws NumericError("non-finite gradient at <name>") before touching any
  // parameter if a gradient entry is NaN or infinite.
  void step(ParamStore<T>& store);

  std::size_t steps_taken() const { return t_; }
  double last_lr() const { return last_lr_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  double last_lr_ = 0.0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace btx
