#pragma once

// Resampling and filtering on CHW / HW float tensors.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dicad/tensor.hpp"

namespace dicad {

// Bilinear resize with half-pixel centres and edge clamping; input CHW.
template <class T>
basic_tensor<T> resize_bilinear(const basic_tensor<T>& src, std::size_t out_h, std::size_t out_w) {
  if (src.rank() != 3) throw std::invalid_argument("resize_bilinear expects CHW, got " + shape_str(src.shape()));
  const std::size_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (H == out_h && W == out_w) return src;
  basic_tensor<T> out(Shape{C, out_h, out_w});
  const double sy = double(H) / double(out_h), sx = double(W) / double(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(H - 1));
    const std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(W - 1));
      const std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - double(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1)) +
                         wy * ((1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1));
        out.at(c, y, x) = T(v);
      }
    }
  }
  return out;
}

// Nearest-neighbour resize; input CHW.
template <class T>
basic_tensor<T> resize_nearest(const basic_tensor<T>& src, std::size_t out_h, std::size_t out_w) {
  if (src.rank() != 3) throw std::invalid_argument("resize_nearest expects CHW");
  const std::size_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (H == out_h && W == out_w) return src;
  basic_tensor<T> out(Shape{C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        out.at(c, y, x) = src.at(c, std::min(H - 1, y * H / out_h), std::min(W - 1, x * W / out_w));
  return out;
}

// Half-sample symmetric reflection (…1 0 | 0 1 … n-1 | n-1 n-2 …). Each
// input sample keeps total kernel weight 1, so blurring preserves the mean.
inline long reflect_index(long i, long n) {
  const long period = 2 * n;
  i = ((i % period) + period) % period;
  return i < n ? i : period - 1 - i;
}

// Separable Gaussian blur of a HW (or 1HW) map, kernel truncated at 4 sigma,
// reflect padding. sigma <= 0 returns the input.
template <class T>
basic_tensor<T> gaussian_blur(const basic_tensor<T>& map, double sigma) {
  if (sigma <= 0) return map;
  const std::size_t H = map.dim(map.rank() - 2), W = map.dim(map.rank() - 1);
  if (map.size() != H * W) throw std::invalid_argument("gaussian_blur expects a single-channel map");
  const long radius = std::max<long>(1, long(std::ceil(4.0 * sigma)));
  std::vector<double> k(std::size_t(2 * radius + 1));
  double ks = 0;
  for (long i = -radius; i <= radius; ++i) ks += k[std::size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  std::vector<double> tmp(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0;
      for (long i = -radius; i <= radius; ++i)
        s += k[std::size_t(i + radius)] * map[y * W + std::size_t(reflect_index(long(x) + i, long(W)))];
      tmp[y * W + x] = s;
    }
  basic_tensor<T> out(map.shape());
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0;
      for (long i = -radius; i <= radius; ++i)
        s += k[std::size_t(i + radius)] * tmp[std::size_t(reflect_index(long(y) + i, long(H))) * W + x];
      out[y * W + x] = T(s);
    }
  return out;
}

}  // namespace dicad
