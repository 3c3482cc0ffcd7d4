#pragma once

#include <cmath>
#include <vector>

#include "sekd/core/tensor.hpp"
#include "sekd/model/params.hpp"

namespace sekd::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over the trainable arrays of a parameter set.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const model::NetworkParams<T>& params, AdamConfig cfg = {})
      : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

  void step(model::NetworkParams<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.count(); ++i) {
      if (!params.trainable(i)) continue;
      T* w = params[i].data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      const T* g = grads[i].data();
      for (std::size_t k = 0; k < params[i].size(); ++k) {
        m[k] = static_cast<T>(cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k]);
        v[k] = static_cast<T>(cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * double(g[k]) * g[k]);
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] = static_cast<T>(w[k] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace sekd::nn
