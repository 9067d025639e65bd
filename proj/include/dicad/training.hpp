#pragma once

// Denoiser training on codec latents and codec (autoencoder) training.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/codec.hpp"
#include "dicad/denoiser.hpp"
#include "dicad/diffusion_math.hpp"
#include "dicad/optim.hpp"

namespace dicad {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 300;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  double ema_decay = 0.0;  // 0 keeps the raw weights

  void validate() const {
    if (epochs < 1 || batch_size < 1 || !(learning_rate > 0) || weight_decay < 0)
      throw std::invalid_argument("train config: epochs, batch_size and learning_rate must be positive");
    if (!(ema_decay >= 0 && ema_decay < 1)) throw std::invalid_argument("train config: ema_decay must lie in [0,1)");
  }
  nlohmann::json to_json() const {
    return {{"epochs", epochs},         {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
            {"batch_size", batch_size}, {"seed", seed},                   {"clip_norm", clip_norm},
            {"ema_decay", ema_decay}};
  }
  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.batch_size = j.at("batch_size");
    c.seed = j.at("seed");
    c.clip_norm = j.value("clip_norm", 1.0);
    c.ema_decay = j.value("ema_decay", 0.0);
    return c;
  }
};

struct TrainHistory {
  std::vector<double> epoch_loss;
};

// || eps - eps_theta(z_t, t) ||^2 averaged over elements, with
// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
template <class T>
ag::Var<T> noise_prediction_loss(const Denoiser<T>& model, const basic_tensor<T>& z0_batch, std::span<const int> steps,
                                 const basic_tensor<T>& eps_batch, const NoiseSchedule& schedule) {
  z0_batch.require_same_shape(eps_batch, "noise_prediction_loss");
  const std::size_t N = z0_batch.dim(0), per = z0_batch.size() / N;
  basic_tensor<T> zt(z0_batch.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const float ab = schedule.alpha_bar(steps[n]);
    const T a = T(std::sqrt(ab)), b = T(std::sqrt(1.0f - ab));
    for (std::size_t i = 0; i < per; ++i) zt[n * per + i] = a * z0_batch[n * per + i] + b * eps_batch[n * per + i];
  }
  auto pred = model.forward(ag::constant(std::move(zt)), steps);
  return ag::mse(pred, ag::constant(eps_batch));
}

struct LatentStats {
  std::vector<double> mean, std;
  nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}}; }
};

inline LatentStats latent_statistics(const std::vector<Tensor>& latents) {
  LatentStats s;
  if (latents.empty()) return s;
  const std::size_t C = latents[0].dim(0), hw = latents[0].dim(1) * latents[0].dim(2);
  s.mean.assign(C, 0.0);
  s.std.assign(C, 0.0);
  for (const auto& z : latents)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i) s.mean[c] += z[c * hw + i];
  const double n = double(latents.size() * hw);
  for (auto& m : s.mean) m /= n;
  for (const auto& z : latents)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i) s.std[c] += std::pow(z[c * hw + i] - s.mean[c], 2);
  for (auto& v : s.std) v = std::sqrt(v / n);
  return s;
}

using EpochCallback = std::function<void(int epoch, double loss)>;

// Trains `model` in place on latents of `images` (CHW, [0,1]).
template <class T = float>
TrainHistory train_denoiser(Denoiser<T>& model, std::span<const Tensor> images, const LatentCodec& codec,
                            const NoiseSchedule& schedule, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("train_denoiser: empty training set");
  std::vector<basic_tensor<T>> latents;
  for (const auto& img : images) latents.push_back(codec.encode_image(img).template cast<T>());

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> tdist(1, schedule.steps());
  AdamW<T> opt(model.params(), {cfg.learning_rate, cfg.weight_decay, 0.9, 0.999, 1e-8, cfg.clip_norm});
  std::vector<std::size_t> order(latents.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<basic_tensor<T>> ema;
  if (cfg.ema_decay > 0)
    for (const auto& [n, v] : model.params().entries) ema.push_back(v.value());
  TrainHistory hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<basic_tensor<T>> zs;
      std::vector<int> steps;
      for (std::size_t i = start; i < end; ++i) {
        zs.push_back(latents[order[i]]);
        steps.push_back(tdist(rng));
      }
      auto z0 = stack<T>(zs);
      auto eps = randn<T>(z0.shape(), rng);
      model.params().zero_grad();
      auto loss = noise_prediction_loss(model, z0, steps, eps, schedule);
      const double lv = double(loss.value()[0]);
      if (!std::isfinite(lv))
        throw TrainingError("non-finite denoiser loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batches + 1));
      ag::backward(loss);
      opt.step();
      if (!ema.empty()) {
        const T d = T(cfg.ema_decay);
        for (std::size_t k = 0; k < ema.size(); ++k) {
          const auto& w = model.params().entries[k].second.value();
          for (std::size_t i = 0; i < w.size(); ++i) ema[k][i] = d * ema[k][i] + (1 - d) * w[i];
        }
      }
      total += lv;
      ++batches;
    }
    hist.epoch_loss.push_back(total / double(batches));
    if (on_epoch) on_epoch(epoch + 1, hist.epoch_loss.back());
  }
  for (std::size_t k = 0; k < ema.size(); ++k) model.params().entries[k].second.mutable_value() = ema[k];
  return hist;
}

// Trains an autoencoder codec to reconstruct `images`; returns per-epoch MSE
// in the [-1,1] space.
inline TrainHistory train_codec(AutoencoderCodec& codec, std::span<const Tensor> images, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("train_codec: empty training set");
  std::mt19937_64 rng(cfg.seed);
  AdamW<float> opt(*codec.trainable(), {cfg.learning_rate, cfg.weight_decay, 0.9, 0.999, 1e-8, cfg.clip_norm});
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  TrainHistory hist;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<Tensor> xs;
      for (std::size_t i = start; i < end; ++i) xs.push_back(images[order[i]]);
      Tensor x = stack<float>(xs);
      for (auto& v : x.vec()) v = 2.0f * v - 1.0f;
      auto target = ag::constant(x);
      codec.trainable()->zero_grad();
      auto loss = ag::mse(codec.decode_var(codec.encode_var(target)), target);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) throw TrainingError("non-finite codec loss at epoch " + std::to_string(epoch + 1));
      ag::backward(loss);
      opt.step();
      total += lv;
      ++batches;
    }
    hist.epoch_loss.push_back(total / double(batches));
    if (on_epoch) on_epoch(epoch + 1, hist.epoch_loss.back());
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Denoiser checkpoints

struct DenoiserCheckpoint {
  std::unique_ptr<Denoiser<float>> model;
  NoiseSchedule schedule;
  TrainConfig train;
  nlohmann::json codec;
  LatentStats stats;
  TrainHistory history;
};

inline void save_denoiser(const std::filesystem::path& path, const Denoiser<float>& model,
                          const NoiseSchedule& schedule, const TrainConfig& cfg, const LatentCodec& codec,
                          const LatentStats& stats, const TrainHistory& hist) {
  Checkpoint ck;
  ck.meta["kind"] = "denoiser";
  ck.meta["architecture"] = model.architecture();
  ck.meta["schedule"] = {{"beta_start", schedule.beta_start()},
                         {"beta_end", schedule.beta_end()},
                         {"steps", schedule.steps()}};
  ck.meta["train"] = cfg.to_json();
  ck.meta["codec"] = codec.describe();
  ck.meta["latent_stats"] = stats.to_json();
  ck.meta["loss_history"] = hist.epoch_loss;
  store_params(model.params(), ck);
  ck.save(path);
}

inline DenoiserCheckpoint load_denoiser(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "denoiser") throw FormatError(path.string() + ": not a denoiser checkpoint");
  DenoiserCheckpoint out;
  out.model = make_denoiser<float>(ck.meta.at("architecture"));
  load_params(out.model->params(), ck, path.string());
  const auto& s = ck.meta.at("schedule");
  out.schedule = NoiseSchedule::linear(s.at("beta_start"), s.at("beta_end"), s.at("steps"));
  out.train = TrainConfig::from_json(ck.meta.at("train"));
  out.codec = ck.meta.at("codec");
  out.stats.mean = ck.meta.at("latent_stats").at("mean").get<std::vector<double>>();
  out.stats.std = ck.meta.at("latent_stats").at("std").get<std::vector<double>>();
  out.history.epoch_loss = ck.meta.at("loss_history").get<std::vector<double>>();
  return out;
}

}  // namespace dicad
