#pragma once

// Noise-prediction networks. UNetDenoiser is the desk-scale U-shaped
// convolutional model; LinearDenoiser is a two-parameter model used for
// gradient checks.

#include <memory>
#include <nlohmann/json.hpp>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dicad/autograd.hpp"
#include "dicad/checkpoint.hpp"
#include "dicad/layers.hpp"

namespace dicad {

template <class T>
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  // zt [N,C,H,W], one timestep per batch item -> predicted noise, same shape.
  virtual ag::Var<T> forward(const ag::Var<T>& zt, std::span<const int> steps) const = 0;
  virtual ag::ParamSet<T>& params() = 0;
  virtual const ag::ParamSet<T>& params() const = 0;
  virtual nlohmann::json architecture() const = 0;

  // Inference on a single CHW latent.
  basic_tensor<T> predict(const basic_tensor<T>& zt, int t) const {
    ag::NoGradGuard guard;
    const int steps[1] = {t};
    auto out = forward(ag::constant(as_batch(zt)), steps);
    return out.value().reshaped(zt.shape());
  }
};

struct UNetConfig {
  std::size_t in_channels = 4;
  std::size_t base_channels = 32;
  std::size_t levels = 2;  // number of resolutions
  std::size_t time_dim = 32;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"type", "unet"},
            {"in_channels", in_channels},
            {"base_channels", base_channels},
            {"levels", levels},
            {"time_dim", time_dim},
            {"seed", seed}};
  }
  static UNetConfig from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.in_channels = j.at("in_channels");
    c.base_channels = j.at("base_channels");
    c.levels = j.at("levels");
    c.time_dim = j.at("time_dim");
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
  }
};

template <class T>
class UNetDenoiser final : public Denoiser<T> {
  struct ResBlock {
    nn::Conv2d<T> conv1, conv2;
    nn::Linear<T> temb;
    ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& t) const {
      auto h = conv1(ag::silu(x));
      h = ag::add_channel(h, temb(t));
      h = conv2(ag::silu(h));
      return ag::add(x, h);
    }
  };

 public:
  explicit UNetDenoiser(UNetConfig cfg) : cfg_(cfg) {
    if (cfg.levels < 1 || cfg.levels > 4) throw std::invalid_argument("unet levels must be in [1,4]");
    if (cfg.time_dim < 2 || cfg.time_dim % 2) throw std::invalid_argument("unet time_dim must be even");
    std::mt19937_64 rng(cfg.seed);
    const std::size_t hidden = cfg.time_dim * 2;
    time1_ = nn::Linear<T>::make(ps_, "time.0", cfg.time_dim, hidden, rng);
    time2_ = nn::Linear<T>::make(ps_, "time.1", hidden, hidden, rng);
    conv_in_ = nn::Conv2d<T>::make(ps_, "conv_in", cfg.in_channels, width(0), 3, rng);
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      const std::string p = "down." + std::to_string(l);
      down_.push_back(res_block(p + ".res", width(l), hidden, rng));
      if (l + 1 < cfg.levels) down_conv_.push_back(nn::Conv2d<T>::make(ps_, p + ".conv", width(l), width(l + 1), 3, rng));
    }
    for (std::size_t l = cfg.levels - 1; l-- > 0;) {
      const std::string p = "up." + std::to_string(l);
      up_conv_.push_back(nn::Conv2d<T>::make(ps_, p + ".conv", width(l + 1) + width(l), width(l), 3, rng));
      up_.push_back(res_block(p + ".res", width(l), hidden, rng));
    }
    conv_out_ = nn::Conv2d<T>::make(ps_, "conv_out", width(0), cfg.in_channels, 3, rng, 0.1);
    // linear path from input to output; the silu head alone cannot pass signed
    // latents through when width(0) is close to in_channels
    skip_ = nn::Conv2d<T>::make(ps_, "skip", cfg.in_channels, cfg.in_channels, 1, rng, 0.0);
  }

  ag::Var<T> forward(const ag::Var<T>& zt, std::span<const int> steps) const override {
    const std::size_t f = std::size_t(1) << (cfg_.levels - 1);
    if (zt.shape().size() != 4 || zt.shape()[1] != cfg_.in_channels || zt.shape()[2] % f || zt.shape()[3] % f)
      throw std::invalid_argument("denoiser input " + shape_str(zt.shape()) + " incompatible with " +
                                  std::to_string(cfg_.in_channels) + " channels / " + std::to_string(cfg_.levels) +
                                  " levels");
    if (steps.size() != zt.shape()[0]) throw std::invalid_argument("denoiser needs one timestep per batch item");
    auto temb = ag::constant(nn::timestep_embedding<T>(steps, cfg_.time_dim));
    auto t = ag::silu(time2_(ag::silu(time1_(temb))));
    auto h = conv_in_(zt);
    std::vector<ag::Var<T>> skips;
    for (std::size_t l = 0; l < cfg_.levels; ++l) {
      h = down_[l](h, t);
      if (l + 1 < cfg_.levels) {
        skips.push_back(h);
        h = down_conv_[l](ag::avg_pool(h, 2));
      }
    }
    for (std::size_t i = 0; i + 1 < cfg_.levels; ++i) {
      const std::size_t l = cfg_.levels - 2 - i;
      h = ag::concat_channels(ag::upsample_nearest(h, 2), skips[l]);
      h = up_conv_[i](h);
      h = up_[i](h, t);
    }
    return ag::add(conv_out_(ag::silu(h)), skip_(zt));
  }

  ag::ParamSet<T>& params() override { return ps_; }
  const ag::ParamSet<T>& params() const override { return ps_; }
  nlohmann::json architecture() const override { return cfg_.to_json(); }
  const UNetConfig& config() const { return cfg_; }

 private:
  std::size_t width(std::size_t level) const { return cfg_.base_channels << std::min<std::size_t>(level, 1); }

  ResBlock res_block(const std::string& name, std::size_t ch, std::size_t hidden, std::mt19937_64& rng) {
    ResBlock b;
    b.conv1 = nn::Conv2d<T>::make(ps_, name + ".conv1", ch, ch, 3, rng);
    b.temb = nn::Linear<T>::make(ps_, name + ".temb", hidden, ch, rng);
    b.conv2 = nn::Conv2d<T>::make(ps_, name + ".conv2", ch, ch, 3, rng, 0.5);
    return b;
  }

  UNetConfig cfg_;
  ag::ParamSet<T> ps_;
  nn::Linear<T> time1_, time2_;
  nn::Conv2d<T> conv_in_, conv_out_, skip_;
  std::vector<ResBlock> down_, up_;
  std::vector<nn::Conv2d<T>> down_conv_, up_conv_;
};

// eps = scale * z + bias, independent of t.
template <class T>
class LinearDenoiser final : public Denoiser<T> {
 public:
  LinearDenoiser(T scale = T{0}, T bias = T{0}) {
    scale_ = ps_.add("scale", basic_tensor<T>::scalar(scale));
    bias_ = ps_.add("bias", basic_tensor<T>::scalar(bias));
  }
  ag::Var<T> forward(const ag::Var<T>& zt, std::span<const int>) const override {
    return ag::affine_scalar(zt, scale_, bias_);
  }
  ag::ParamSet<T>& params() override { return ps_; }
  const ag::ParamSet<T>& params() const override { return ps_; }
  nlohmann::json architecture() const override { return {{"type", "linear"}}; }

 private:
  ag::ParamSet<T> ps_;
  ag::Var<T> scale_, bias_;
};

template <class T>
std::unique_ptr<Denoiser<T>> make_denoiser(const nlohmann::json& arch) {
  const std::string type = arch.at("type");
  if (type == "unet") return std::make_unique<UNetDenoiser<T>>(UNetConfig::from_json(arch));
  if (type == "linear") return std::make_unique<LinearDenoiser<T>>();
  throw FormatError("unknown denoiser architecture '" + type + "'");
}

}  // namespace dicad
