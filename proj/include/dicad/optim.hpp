#pragma once

#include <cmath>
#include <vector>

#include "dicad/autograd.hpp"

namespace dicad {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Adam with decoupled weight decay over a ParamSet.
template <class T>
class AdamW {
 public:
  AdamW(ag::ParamSet<T>& params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, v] : params_.entries) {
      m_.emplace_back(v.value().shape());
      v_.emplace_back(v.value().shape());
    }
  }

  // Global L2 norm of all gradients before clipping.
  double grad_norm() const {
    double s = 0;
    for (const auto& [name, v] : params_.entries)
      for (T g : v.grad().vec()) s += double(g) * double(g);
    return std::sqrt(s);
  }

  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  void step() {
    ++t_;
    double clip = 1.0;
    if (cfg_.clip_norm > 0) {
      const double n = grad_norm();
      if (n > cfg_.clip_norm) clip = cfg_.clip_norm / (n + 1e-12);
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t p = 0; p < params_.entries.size(); ++p) {
      auto& var = params_.entries[p].second;
      if (var.grad().empty()) continue;
      auto& w = var.mutable_value();
      const auto& g = var.grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = double(g[i]) * clip;
        m[i] = T(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
        v[i] = T(cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi);
        const double mhat = m[i] / bc1, vhat = v[i] / bc2;
        double wi = w[i];
        wi -= cfg_.learning_rate * cfg_.weight_decay * wi;
        wi -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        w[i] = T(wi);
      }
    }
  }

 private:
  ag::ParamSet<T>& params_;
  AdamWConfig cfg_;
  std::vector<basic_tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace dicad
