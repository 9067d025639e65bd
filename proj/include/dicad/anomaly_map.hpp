#pragma once

// Anomaly maps from an input/reconstruction pair:
//   f_map  sum over blocks of per-location cosine distance between features
//   l_map  per-location L1 distance between latents
//   A_map  lambda * norm(l_map) + (1 - lambda) * norm(f_map), Gaussian smoothed
// Maps are HW tensors at image resolution.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/autograd.hpp"
#include "dicad/feature_extractor.hpp"
#include "dicad/imaging.hpp"

namespace dicad {

enum class MapNormalization {
  min_max,      // per-map min-max to [0,1]
  calibration,  // divide by the maximum observed on nominal calibration images
};

struct AnomalyMapConfig {
  float lambda = 0.85f;
  double smoothing_sigma = 4.0;
  std::vector<int> blocks{2, 3};
  MapNormalization normalization = MapNormalization::min_max;
  float latent_scale = 1.0f;   // calibration maxima, used in calibration mode
  float feature_scale = 1.0f;
  bool score_from_smoothed = true;

  void validate() const {
    if (!(lambda >= 0.0f && lambda <= 1.0f)) throw std::invalid_argument("lambda must lie in [0,1]");
    if (smoothing_sigma < 0) throw std::invalid_argument("smoothing sigma must be >= 0");
    if (!(latent_scale > 0.0f) || !(feature_scale > 0.0f)) throw std::invalid_argument("calibration scales must be > 0");
  }
};

struct AnomalyResult {
  Tensor f_map, l_map, a_map;
  float image_score = 0.0f;
  int t_hat = 0;
  std::vector<std::string> warnings;
};

// Cosine-distance maps of paired feature blocks (each [1,C,h,w] or [C,h,w]),
// bilinearly upsampled to height x width and summed.
inline Tensor feature_map_from_features(std::span<const Tensor> fa, std::span<const Tensor> fb, std::size_t height,
                                        std::size_t width) {
  if (fa.empty()) throw std::invalid_argument("feature_map needs at least one block");
  if (fa.size() != fb.size()) throw std::invalid_argument("feature_map: block count mismatch");
  Tensor out(Shape{height, width});
  ag::NoGradGuard g;
  for (std::size_t j = 0; j < fa.size(); ++j) {
    Tensor a = fa[j].rank() == 3 ? as_batch(fa[j]) : fa[j];
    Tensor b = fb[j].rank() == 3 ? as_batch(fb[j]) : fb[j];
    const Tensor d = ag::cosine_distance_map(ag::constant(a), ag::constant(b)).value();
    const Tensor up = resize_bilinear(d.reshaped({1, d.dim(2), d.dim(3)}), height, width);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += up[i];
  }
  return out;
}

inline Tensor feature_map(const Tensor& x0, const Tensor& x_hat, const FeatureExtractor& phi, std::span<const int> blocks) {
  x0.require_same_shape(x_hat, "feature_map");
  if (blocks.empty()) throw std::invalid_argument("feature_map needs at least one block");
  const auto fa = phi.extract(as_batch(x0), blocks);
  const auto fb = phi.extract(as_batch(x_hat), blocks);
  return feature_map_from_features(fa, fb, x0.dim(1), x0.dim(2));
}

// Sum over channels of |z0 - z_hat| per latent location, bilinearly
// upsampled to height x width.
inline Tensor latent_map(const Tensor& z0, const Tensor& z_hat, std::size_t height, std::size_t width) {
  z0.require_same_shape(z_hat, "latent_map");
  if (z0.rank() != 3) throw std::invalid_argument("latent_map expects CHW latents");
  const std::size_t C = z0.dim(0), hw = z0.dim(1) * z0.dim(2);
  Tensor d(Shape{1, z0.dim(1), z0.dim(2)});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i) d[i] += std::abs(z0[c * hw + i] - z_hat[c * hw + i]);
  return resize_bilinear(d, height, width).reshaped({height, width});
}

namespace detail {
inline Tensor normalize_map(const Tensor& m, MapNormalization mode, float scale, const char* name,
                            std::vector<std::string>& warnings) {
  Tensor out = m;
  if (mode == MapNormalization::calibration) {
    for (auto& v : out.vec()) v /= scale;
    return out;
  }
  const float lo = min_value(m), hi = max_value(m);
  // float round-off on a flat map is not signal
  if (!(hi - lo > 1e-6f * std::max(1.0f, std::abs(hi)))) {
    warnings.push_back(std::string(name) + " is constant; normalized to zeros");
    out.fill(0.0f);
    return out;
  }
  for (auto& v : out.vec()) v = (v - lo) / (hi - lo);
  return out;
}
}  // namespace detail

inline AnomalyResult fuse(const Tensor& f_map, const Tensor& l_map, const AnomalyMapConfig& cfg) {
  cfg.validate();
  f_map.require_same_shape(l_map, "fuse");
  AnomalyResult r;
  r.f_map = f_map;
  r.l_map = l_map;
  const Tensor ln = detail::normalize_map(l_map, cfg.normalization, cfg.latent_scale, "l_map", r.warnings);
  const Tensor fn = detail::normalize_map(f_map, cfg.normalization, cfg.feature_scale, "f_map", r.warnings);
  Tensor a(l_map.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::max(0.0f, cfg.lambda * ln[i] + (1.0f - cfg.lambda) * fn[i]);
  Tensor smoothed = gaussian_blur(a, cfg.smoothing_sigma);
  r.image_score = max_value(cfg.score_from_smoothed ? smoothed : a);
  r.a_map = std::move(smoothed);
  return r;
}

// Full scoring of an (input, reconstruction) pair.
inline AnomalyResult score_pair(const Tensor& x0, const Tensor& x_hat, const Tensor& z0, const Tensor& z_hat,
                                const FeatureExtractor& phi, const AnomalyMapConfig& cfg) {
  const Tensor f = feature_map(x0, x_hat, phi, cfg.blocks);
  const Tensor l = latent_map(z0, z_hat, x0.dim(1), x0.dim(2));
  return fuse(f, l, cfg);
}

// Upper-quantile threshold: the ceil((1 - fpr) * n)-th smallest score, so
// at most a fraction fpr of nominal scores lies strictly above it.
inline float quantile_threshold(std::vector<float> nominal_scores, double target_fpr) {
  if (nominal_scores.empty()) throw std::invalid_argument("threshold needs a non-empty calibration set");
  if (!(target_fpr >= 0.0 && target_fpr <= 1.0)) throw std::invalid_argument("target FPR must lie in [0,1]");
  std::sort(nominal_scores.begin(), nominal_scores.end());
  const std::size_t n = nominal_scores.size();
  std::size_t k = std::size_t(std::ceil((1.0 - target_fpr) * double(n) - 1e-12));
  k = std::clamp<std::size_t>(k, 1, n);
  return nominal_scores[k - 1];
}

struct Thresholds {
  float pixel = 0.0f;
  float image = 0.0f;
};

inline Thresholds threshold(std::span<const Tensor> calibration_maps, std::span<const float> calibration_scores,
                            double target_fpr) {
  if (calibration_maps.empty() || calibration_scores.empty())
    throw std::invalid_argument("threshold needs a non-empty calibration set");
  std::vector<float> pixels;
  for (const auto& m : calibration_maps) pixels.insert(pixels.end(), m.vec().begin(), m.vec().end());
  return {quantile_threshold(std::move(pixels), target_fpr),
          quantile_threshold({calibration_scores.begin(), calibration_scores.end()}, target_fpr)};
}

}  // namespace dicad
