#include "btx/core/adam.hpp"

#include <algorithm>
#include <cmath>

namespace btx {

double scheduled_lr(const AdamConfig& cfg, std::size_t step) {
  if (step == 0) return 0.0;
  if (cfg.warmup_steps == 0) return cfg.base_lr;
  const double t = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.base_lr * std::min(t / w, 1.0) * std::min(1.0, std::sqrt(w / t));
}

template <typename T>
void Adam<T>::step(ParamStore<T>& store) {
  if (m_.empty()) {
    store.for_each([&](const Parameter<T>& p) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    });
  }
  if (m_.size() != store.size()) {
    throw PreconditionError("Adam: parameter store changed size between steps");
  }

  double norm_sq = 0.0;
  store.for_each([&](const Parameter<T>& p) {
    for (const T g : p.grad.values()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient at " + p.name);
      norm_sq += static_cast<double>(g) * static_cast<double>(g);
    }
  });
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }

  ++t_;
  last_lr_ = scheduled_lr(cfg_, t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T lr = static_cast<T>(last_lr_);
  const T eps = static_cast<T>(cfg_.eps);
  const T c1 = static_cast<T>(bc1);
  const T c2 = static_cast<T>(bc2);
  const T cl = static_cast<T>(clip);

  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter<T>& p = store.at(i);
    T* w = p.value.data();
    T* g = p.grad.data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const T gj = g[j] * cl;
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      g[j] = T(0);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace btx
