#pragma once

// Closed-form diffusion algebra: the variance schedule, direct forward
// sampling with a noise fraction, x0 estimation from predicted noise,
// input-consistency guidance on the predicted noise, and the DDIM update.
// Timesteps are 1-based; alpha_bar(0) is defined as 1 so that the final
// step of a sampling loop lands on t = 0.

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/tensor.hpp"

namespace dicad {

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule linear(float beta_start, float beta_end, int steps) {
    if (steps < 1) throw std::invalid_argument("noise schedule needs T >= 1, got " + std::to_string(steps));
    if (!(beta_start > 0.0f) || !(beta_end < 1.0f) || !(beta_start <= beta_end))
      throw std::invalid_argument("noise schedule endpoints must satisfy 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    s.betas_.resize(std::size_t(steps));
    for (int t = 1; t <= steps; ++t) {
      const double frac = steps == 1 ? 0.0 : double(t - 1) / double(steps - 1);
      s.betas_[std::size_t(t - 1)] = t == steps ? beta_end : float(beta_start + (double(beta_end) - beta_start) * frac);
    }
    s.alphas_.resize(s.betas_.size());
    s.alpha_bars_.resize(s.betas_.size());
    float prod = 1.0f;
    for (std::size_t i = 0; i < s.betas_.size(); ++i) {
      s.alphas_[i] = 1.0f - s.betas_[i];
      prod *= s.alphas_[i];
      s.alpha_bars_[i] = prod;
    }
    return s;
  }

  int steps() const noexcept { return int(betas_.size()); }
  float beta_start() const noexcept { return beta_start_; }
  float beta_end() const noexcept { return beta_end_; }

  float beta(int t) const { return betas_.at(index(t)); }
  float alpha(int t) const { return alphas_.at(index(t)); }
  // alpha_bar(0) == 1.
  float alpha_bar(int t) const { return t == 0 ? 1.0f : alpha_bars_.at(index(t)); }

  const std::vector<float>& betas() const noexcept { return betas_; }
  const std::vector<float>& alphas() const noexcept { return alphas_; }
  const std::vector<float>& alpha_bars() const noexcept { return alpha_bars_; }

  void require_timestep(int t) const {
    if (t < 1 || t > steps())
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }

 private:
  std::size_t index(int t) const {
    require_timestep(t);
    return std::size_t(t - 1);
  }

  float beta_start_ = 0, beta_end_ = 0;
  std::vector<float> betas_, alphas_, alpha_bars_;
};

struct GuidanceConfig {
  float eta = 8.0f;    // guidance temperature; 0 disables guidance
  float sigma = 0.0f;  // DDIM stochasticity; 0 is deterministic
};

template <class T>
basic_tensor<T> randn(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<T> nd(T{0}, T{1});
  basic_tensor<T> out(shape);
  for (auto& v : out.vec()) v = nd(rng);
  return out;
}

// sqrt(abar_t) * x0 + omega * sqrt(1 - abar_t) * eps
template <class T>
basic_tensor<T> forward_sample(const basic_tensor<T>& x0, int t, const basic_tensor<T>& eps,
                               const NoiseSchedule& schedule, float omega = 1.0f) {
  x0.require_same_shape(eps, "forward_sample");
  schedule.require_timestep(t);
  const float ab = schedule.alpha_bar(t);
  const T a = T(std::sqrt(ab));
  const T b = T(omega * std::sqrt(1.0f - ab));
  basic_tensor<T> out(x0.shape());
  if (b == T{0}) {
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i];
  } else {
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  }
  return out;
}

// (x_t - sqrt(1 - abar_t) * eps_pred) / sqrt(abar_t)
template <class T>
basic_tensor<T> x0_estimate(const basic_tensor<T>& xt, const basic_tensor<T>& eps_pred, int t,
                            const NoiseSchedule& schedule) {
  xt.require_same_shape(eps_pred, "x0_estimate");
  const float ab = schedule.alpha_bar(t);
  const T s = T(std::sqrt(1.0f - ab));
  const T inv = T(1.0f / std::sqrt(ab));
  basic_tensor<T> out(xt.shape());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = (xt[i] - s * eps_pred[i]) * inv;
  return out;
}

// Pulls the predicted noise toward consistency with the conditioning target:
//   z~ = sqrt(abar) z0 + sqrt(1 - abar) eps
//   eps_hat = eps - eta sqrt(1 - abar) (z~ - z_t)
template <class T>
basic_tensor<T> guided_eps(const basic_tensor<T>& eps_pred, const basic_tensor<T>& zt,
                           const basic_tensor<T>& z0_target, int t, const NoiseSchedule& schedule,
                           const GuidanceConfig& cfg) {
  eps_pred.require_same_shape(zt, "guided_eps");
  eps_pred.require_same_shape(z0_target, "guided_eps");
  if (cfg.eta == 0.0f) {
    schedule.require_timestep(t);
    return eps_pred;
  }
  const float ab = schedule.alpha_bar(t);
  const T sa = T(std::sqrt(ab)), sn = T(std::sqrt(1.0f - ab)), k = T(cfg.eta) * sn;
  basic_tensor<T> out(eps_pred.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T tilde = sa * z0_target[i] + sn * eps_pred[i];
    out[i] = eps_pred[i] - k * (tilde - zt[i]);
  }
  return out;
}

// One DDIM update from tau_i to tau_prev (tau_prev == 0 is the final step).
template <class T>
basic_tensor<T> ddim_step(const basic_tensor<T>& x_tau, const basic_tensor<T>& eps_hat, int tau_i, int tau_prev,
                          const NoiseSchedule& schedule, const GuidanceConfig& cfg,
                          const basic_tensor<T>* noise = nullptr) {
  if (tau_prev >= tau_i || tau_prev < 0)
    throw std::invalid_argument("ddim_step needs 0 <= tau_prev < tau_i, got " + std::to_string(tau_prev) + ", " +
                                std::to_string(tau_i));
  const float ab_prev = schedule.alpha_bar(tau_prev);
  const float sigma = cfg.sigma;
  const float rest = 1.0f - ab_prev - sigma * sigma;
  if (rest < 0.0f)
    throw std::invalid_argument("ddim_step: sigma^2 exceeds 1 - alpha_bar(" + std::to_string(tau_prev) + ")");
  if (sigma > 0.0f) {
    if (!noise) throw std::invalid_argument("ddim_step: sigma > 0 requires a noise array");
    x_tau.require_same_shape(*noise, "ddim_step");
  }
  const basic_tensor<T> f = x0_estimate(x_tau, eps_hat, tau_i, schedule);
  const T a = T(std::sqrt(ab_prev)), b = T(std::sqrt(rest)), c = T(sigma);
  basic_tensor<T> out(x_tau.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a * f[i] + b * eps_hat[i];
    if (sigma > 0.0f) out[i] += c * (*noise)[i];
  }
  return out;
}

// Evenly spaced increasing timesteps ending at t_hat.
inline std::vector<int> make_subsequence(int t_hat, int count) {
  if (t_hat < 1) throw std::invalid_argument("make_subsequence needs T_hat >= 1");
  if (count < 1) throw std::invalid_argument("make_subsequence needs S >= 1");
  std::vector<int> taus;
  for (int i = 1; i <= count; ++i) {
    int tau = int(std::lround(double(i) * t_hat / count));
    tau = std::max(tau, 1);
    if (taus.empty() || tau > taus.back()) taus.push_back(tau);
  }
  taus.back() = t_hat;
  return taus;
}

}  // namespace dicad
