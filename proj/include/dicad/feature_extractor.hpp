#pragma once

// Convolutional feature extractor with J stages. Stage j (1-based) halves
// the spatial resolution, so block outputs shrink with depth.

#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dicad/autograd.hpp"
#include "dicad/checkpoint.hpp"
#include "dicad/layers.hpp"

namespace dicad {

struct BackboneConfig {
  std::vector<std::size_t> widths{16, 32, 64, 64};
  std::uint64_t seed = 0;

  nlohmann::json to_json() const { return {{"widths", widths}, {"seed", seed}}; }
  static BackboneConfig from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.widths = j.at("widths").get<std::vector<std::size_t>>();
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
  }
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.widths.empty()) throw std::invalid_argument("backbone needs at least one block");
    std::mt19937_64 rng(cfg_.seed);
    std::size_t in = 3;
    for (std::size_t j = 0; j < cfg_.widths.size(); ++j) {
      convs_.push_back(nn::Conv2d<float>::make(ps_, "block" + std::to_string(j + 1) + ".conv", in, cfg_.widths[j], 3, rng));
      in = cfg_.widths[j];
    }
  }

  FeatureExtractor(const FeatureExtractor& o) : FeatureExtractor(o.cfg_) { copy_values(o); }
  FeatureExtractor& operator=(const FeatureExtractor& o) {
    if (this != &o) {
      FeatureExtractor tmp(o);
      cfg_ = tmp.cfg_;
      ps_ = std::move(tmp.ps_);
      convs_ = std::move(tmp.convs_);
    }
    return *this;
  }
  FeatureExtractor(FeatureExtractor&&) = default;
  FeatureExtractor& operator=(FeatureExtractor&&) = default;

  std::size_t num_blocks() const noexcept { return convs_.size(); }
  std::size_t block_channels(int block) const { return cfg_.widths.at(std::size_t(check_block(block) - 1)); }
  const BackboneConfig& config() const noexcept { return cfg_; }
  ag::ParamSet<float>& params() noexcept { return ps_; }
  const ag::ParamSet<float>& params() const noexcept { return ps_; }

  int check_block(int block) const {
    if (block < 1 || std::size_t(block) > num_blocks())
      throw std::out_of_range("feature block " + std::to_string(block) + " outside [1, " +
                              std::to_string(num_blocks()) + "]");
    return block;
  }

  // Differentiable forward; returns outputs of blocks 1..upto. Input NCHW in [0,1].
  std::vector<ag::Var<float>> forward(const ag::Var<float>& images, int upto) const {
    check_block(upto);
    if (images.shape().size() != 4 || images.shape()[1] != 3)
      throw std::invalid_argument("feature extractor expects NCHW RGB input, got " + shape_str(images.shape()));
    const std::size_t f = std::size_t(1) << upto;
    if (images.shape()[2] % f || images.shape()[3] % f)
      throw std::invalid_argument("image size not divisible by 2^" + std::to_string(upto));
    Tensor shifted = images.value();
    auto h = ag::scale(ag::sub(images, ag::constant(Tensor(shifted.shape(), 0.5f))), 2.0f);
    std::vector<ag::Var<float>> out;
    for (int j = 0; j < upto; ++j) {
      h = ag::avg_pool(ag::relu(convs_[std::size_t(j)](h)), 2);
      out.push_back(h);
    }
    return out;
  }

  // Feature maps of the requested 1-based blocks for NCHW images.
  std::vector<Tensor> extract(const Tensor& images, std::span<const int> blocks) const {
    if (blocks.empty()) throw std::invalid_argument("extract needs at least one block");
    int upto = 0;
    for (int b : blocks) upto = std::max(upto, check_block(b));
    ag::NoGradGuard g;
    auto all = forward(ag::constant(images), upto);
    std::vector<Tensor> out;
    for (int b : blocks) out.push_back(all[std::size_t(b - 1)].value());
    return out;
  }

  // Spatially averaged block output of one CHW image.
  std::vector<float> pooled(const Tensor& image, int block) const {
    const int blocks[1] = {block};
    const Tensor f = extract(as_batch(image), blocks)[0];
    const std::size_t C = f.dim(1), hw = f.dim(2) * f.dim(3);
    std::vector<float> v(C, 0.0f);
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < hw; ++i) s += f[c * hw + i];
      v[c] = float(s / double(hw));
    }
    return v;
  }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const {
    Checkpoint ck;
    ck.meta["kind"] = "backbone";
    ck.meta["backbone"] = cfg_.to_json();
    if (!extra.is_null()) ck.meta["info"] = extra;
    store_params(ps_, ck);
    ck.save(path);
  }

  std::uint64_t digest() const { return params_digest(ps_); }

 private:
  void copy_values(const FeatureExtractor& o) {
    for (std::size_t i = 0; i < ps_.entries.size(); ++i)
      ps_.entries[i].second.mutable_value() = o.ps_.entries[i].second.value();
  }

  BackboneConfig cfg_;
  ag::ParamSet<float> ps_;
  std::vector<nn::Conv2d<float>> convs_;
};

// Loads a backbone checkpoint, validating every layer against the declared
// architecture.
inline FeatureExtractor load_backbone(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("backbone weights not found: " + path.string());
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "backbone") throw FormatError(path.string() + ": not a backbone checkpoint");
  FeatureExtractor fx(BackboneConfig::from_json(ck.meta.at("backbone")));
  load_params(fx.params(), ck, path.string());
  return fx;
}

}  // namespace dicad
