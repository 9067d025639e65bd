#pragma once

#include <cmath>
#include <random>
#include <string>

#include "dicad/autograd.hpp"

namespace dicad::nn {

template <class T>
basic_tensor<T> he_normal(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  basic_tensor<T> t(shape);
  if (gain == 0.0) return t;
  std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / double(fan_in)));
  for (auto& v : t.vec()) v = T(nd(rng));
  return t;
}

template <class T>
struct Conv2d {
  ag::Var<T> weight, bias;
  std::size_t pad = 1;

  static Conv2d make(ag::ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                     std::mt19937_64& rng, double gain = 1.0) {
    Conv2d c;
    c.weight = ps.add(name + ".weight", he_normal<T>({out, in, k, k}, in * k * k, rng, gain));
    c.bias = ps.add(name + ".bias", basic_tensor<T>({out}));
    c.pad = k / 2;
    return c;
  }
  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv2d(x, weight, bias, pad); }
};

template <class T>
struct Linear {
  ag::Var<T> weight, bias;

  static Linear make(ag::ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out,
                     std::mt19937_64& rng, double gain = 1.0) {
    Linear l;
    l.weight = ps.add(name + ".weight", he_normal<T>({out, in}, in, rng, gain));
    l.bias = ps.add(name + ".bias", basic_tensor<T>({out}));
    return l;
  }
  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, weight, bias); }
};

// Sinusoidal timestep features, shape [N, dim].
template <class T>
basic_tensor<T> timestep_embedding(std::span<const int> steps, std::size_t dim) {
  const std::size_t half = dim / 2;
  basic_tensor<T> e(Shape{steps.size(), dim});
  for (std::size_t n = 0; n < steps.size(); ++n)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      e[n * dim + i] = T(std::sin(steps[n] * freq));
      e[n * dim + half + i] = T(std::cos(steps[n] * freq));
    }
  return e;
}

}  // namespace dicad::nn
