#pragma once

// Reconstruction of an input image: choose the noising step (dynamically
// from the DIC bins or statically), scale the input latent to that step
// with an optional noise fraction, run the guided deterministic DDIM loop
// over an evenly spaced subsequence and decode.

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "dicad/codec.hpp"
#include "dicad/denoiser.hpp"
#include "dicad/diffusion_math.hpp"
#include "dicad/dic.hpp"
#include "dicad/feature_extractor.hpp"

namespace dicad {

struct ReconstructionConfig {
  GuidanceConfig guidance{};
  float omega = 0.0f;        // noise fraction of the initial latent; 0 is pure scaling
  int sampling_steps = 10;   // S
  bool keep_trace = false;
  std::uint64_t noise_seed = 0;
  DicConfig dic{};
};

struct ReconstructionResult {
  Tensor x_hat;  // decoded reconstruction, CHW
  Tensor z_hat;  // reconstructed latent
  Tensor z0;     // encoded input
  Tensor z_start;
  int t_hat = 0;
  std::optional<DicDecision> dic;
  std::vector<Tensor> trace;
};

// Frozen networks and DIC state shared by every reconstruction.
struct ReconstructionModels {
  const Denoiser<float>* denoiser = nullptr;
  const LatentCodec* codec = nullptr;
  const FeatureExtractor* phi = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const FeatureIndex* index = nullptr;
  const BinTable* bins = nullptr;
};

// Runs the sampling loop from a given starting step.
inline ReconstructionResult reconstruct_at(const Tensor& x0, int t_hat, const ReconstructionModels& m,
                                           const ReconstructionConfig& cfg) {
  if (!m.denoiser || !m.codec || !m.schedule) throw std::logic_error("reconstruction needs denoiser, codec and schedule");
  m.schedule->require_timestep(t_hat);
  ReconstructionResult r;
  r.t_hat = t_hat;
  r.z0 = m.codec->encode_image(x0);

  std::mt19937_64 rng(cfg.noise_seed);
  Tensor eps = cfg.omega > 0.0f ? randn<float>(r.z0.shape(), rng) : Tensor(r.z0.shape());
  Tensor z = forward_sample(r.z0, t_hat, eps, *m.schedule, cfg.omega);
  r.z_start = z;

  const auto taus = make_subsequence(t_hat, cfg.sampling_steps);
  for (std::size_t i = taus.size(); i-- > 0;) {
    const int t = taus[i];
    const int prev = i > 0 ? taus[i - 1] : 0;
    const Tensor eps_pred = m.denoiser->predict(z, t);
    const Tensor eps_hat = guided_eps(eps_pred, z, r.z0, t, *m.schedule, cfg.guidance);
    GuidanceConfig step_cfg = cfg.guidance;
    std::optional<Tensor> noise;
    if (step_cfg.sigma > 0.0f) {
      step_cfg.sigma = std::min(step_cfg.sigma, std::sqrt(1.0f - m.schedule->alpha_bar(prev)));
      noise = randn<float>(z.shape(), rng);
    }
    z = ddim_step(z, eps_hat, t, prev, *m.schedule, step_cfg, noise ? &*noise : nullptr);
    if (cfg.keep_trace) r.trace.push_back(z);
  }
  r.z_hat = std::move(z);
  r.x_hat = m.codec->decode_latent(r.z_hat);
  return r;
}

// Dynamic reconstruction: T_hat from the DIC bins.
inline ReconstructionResult reconstruct(const Tensor& x0, const ReconstructionModels& m,
                                        const ReconstructionConfig& cfg) {
  if (!m.phi || !m.index || !m.bins || m.index->size() == 0) throw std::logic_error("DIC index has not been built");
  if (m.index->block != cfg.dic.block)
    throw std::invalid_argument("index was built from block " + std::to_string(m.index->block) +
                                " but block " + std::to_string(cfg.dic.block) + " is configured");
  const DicDecision d = dynamic_conditioning(x0, *m.phi, *m.index, *m.bins, cfg.dic);
  auto r = reconstruct_at(x0, d.t_hat, m, cfg);
  r.dic = d;
  return r;
}

// Static reconstruction with a fixed step bounded by T_max.
inline ReconstructionResult reconstruct_static(const Tensor& x0, int fixed_t, const ReconstructionModels& m,
                                               const ReconstructionConfig& cfg) {
  const int t_max = m.bins ? m.bins->t_max : cfg.dic.t_max;
  if (fixed_t < 1 || fixed_t > t_max)
    throw std::invalid_argument("static step " + std::to_string(fixed_t) + " outside [1, T_max=" +
                                std::to_string(t_max) + "]");
  return reconstruct_at(x0, fixed_t, m, cfg);
}

}  // namespace dicad
