#pragma once

// Latent codecs mapping NCHW images in [0,1] to latents downsampled by a
// fixed factor and back.
//   identity    factor 1, latent == image
//   pool        average pooling of 2x-1, bilinear upsampling on decode
//   unshuffle   lossless space-to-depth of 2x-1
//   autoencoder small trained convolutional encoder/decoder

#include <bit>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dicad/autograd.hpp"
#include "dicad/checkpoint.hpp"
#include "dicad/imaging.hpp"
#include "dicad/layers.hpp"

namespace dicad {

class LatentCodec {
 public:
  virtual ~LatentCodec() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t factor() const = 0;
  virtual std::size_t image_channels() const { return 3; }
  virtual std::size_t latent_channels() const = 0;

  // NCHW images -> NCHW latents.
  Tensor encode(const Tensor& images) const {
    check_images(images);
    return do_encode(images);
  }
  Tensor decode(const Tensor& latents) const {
    if (latents.rank() != 4 || latents.dim(1) != latent_channels())
      throw std::invalid_argument(kind() + " codec: expected latents with " + std::to_string(latent_channels()) +
                                  " channels, got " + shape_str(latents.shape()));
    return do_decode(latents);
  }
  Tensor encode_image(const Tensor& chw) const { return unstack(encode(as_batch(chw)), 0); }
  Tensor decode_latent(const Tensor& chw) const { return unstack(decode(as_batch(chw)), 0); }

  virtual nlohmann::json describe() const {
    return {{"kind", kind()}, {"factor", factor()}, {"latent_channels", latent_channels()}};
  }
  virtual ag::ParamSet<float>* trainable() { return nullptr; }
  virtual const ag::ParamSet<float>* trainable() const { return nullptr; }

  void save(const std::filesystem::path& path) const {
    Checkpoint ck;
    ck.meta["kind"] = "codec";
    ck.meta["codec"] = describe();
    if (auto* ps = trainable()) store_params(*ps, ck);
    ck.save(path);
  }

 protected:
  virtual Tensor do_encode(const Tensor& images) const = 0;
  virtual Tensor do_decode(const Tensor& latents) const = 0;

  void check_images(const Tensor& images) const {
    if (images.rank() != 4) throw std::invalid_argument(kind() + " codec: expected NCHW images");
    if (images.dim(1) != image_channels())
      throw std::invalid_argument(kind() + " codec: expected " + std::to_string(image_channels()) +
                                  " image channels, got " + std::to_string(images.dim(1)));
    if (images.dim(2) % factor() || images.dim(3) % factor())
      throw std::invalid_argument(kind() + " codec: image size " + std::to_string(images.dim(2)) + "x" +
                                  std::to_string(images.dim(3)) + " not divisible by factor " +
                                  std::to_string(factor()));
  }
};

class IdentityCodec final : public LatentCodec {
 public:
  std::string kind() const override { return "identity"; }
  std::size_t factor() const override { return 1; }
  std::size_t latent_channels() const override { return 3; }

 protected:
  Tensor do_encode(const Tensor& images) const override { return images; }
  Tensor do_decode(const Tensor& latents) const override { return latents; }
};

class PoolCodec final : public LatentCodec {
 public:
  explicit PoolCodec(std::size_t factor) : factor_(factor) {
    if (factor < 1) throw std::invalid_argument("pool codec factor must be >= 1");
  }
  std::string kind() const override { return "pool"; }
  std::size_t factor() const override { return factor_; }
  std::size_t latent_channels() const override { return 3; }

 protected:
  Tensor do_encode(const Tensor& images) const override {
    const std::size_t N = images.dim(0), C = 3, H = images.dim(2) / factor_, W = images.dim(3) / factor_;
    Tensor z(Shape{N, C, H, W});
    const float inv = 1.0f / float(factor_ * factor_);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H * factor_; ++y)
          for (std::size_t x = 0; x < W * factor_; ++x)
            z.at(n, c, y / factor_, x / factor_) += (2.0f * images.at(n, c, y, x) - 1.0f) * inv;
    return z;
  }
  Tensor do_decode(const Tensor& latents) const override {
    const std::size_t N = latents.dim(0);
    std::vector<Tensor> out;
    for (std::size_t n = 0; n < N; ++n) {
      Tensor up = resize_bilinear(unstack(latents, n), latents.dim(2) * factor_, latents.dim(3) * factor_);
      for (auto& v : up.vec()) v = 0.5f * (v + 1.0f);
      out.push_back(std::move(up));
    }
    return stack<float>(out);
  }

 private:
  std::size_t factor_;
};

class UnshuffleCodec final : public LatentCodec {
 public:
  explicit UnshuffleCodec(std::size_t factor) : factor_(factor) {
    if (factor < 1) throw std::invalid_argument("unshuffle codec factor must be >= 1");
  }
  std::string kind() const override { return "unshuffle"; }
  std::size_t factor() const override { return factor_; }
  std::size_t latent_channels() const override { return 3 * factor_ * factor_; }

 protected:
  Tensor do_encode(const Tensor& images) const override {
    const std::size_t N = images.dim(0), f = factor_, H = images.dim(2) / f, W = images.dim(3) / f;
    Tensor z(Shape{N, 3 * f * f, H, W});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H * f; ++y)
          for (std::size_t x = 0; x < W * f; ++x)
            z.at(n, (c * f + y % f) * f + x % f, y / f, x / f) = 2.0f * images.at(n, c, y, x) - 1.0f;
    return z;
  }
  Tensor do_decode(const Tensor& latents) const override {
    const std::size_t N = latents.dim(0), f = factor_, H = latents.dim(2), W = latents.dim(3);
    Tensor x(Shape{N, 3, H * f, W * f});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H * f; ++y)
          for (std::size_t xx = 0; xx < W * f; ++xx)
            x.at(n, c, y, xx) = 0.5f * (latents.at(n, (c * f + y % f) * f + xx % f, y / f, xx / f) + 1.0f);
    return x;
  }

 private:
  std::size_t factor_;
};

struct AutoencoderConfig {
  std::size_t factor = 4;  // power of two
  std::size_t latent_channels = 4;
  std::size_t width = 32;
  std::uint64_t seed = 0;
};

class AutoencoderCodec final : public LatentCodec {
 public:
  explicit AutoencoderCodec(AutoencoderConfig cfg) : cfg_(cfg) {
    if (cfg.factor < 1 || !std::has_single_bit(cfg.factor))
      throw std::invalid_argument("autoencoder factor must be a power of two");
    levels_ = std::size_t(std::countr_zero(cfg.factor));
    std::mt19937_64 rng(cfg.seed);
    enc_.push_back(nn::Conv2d<float>::make(ps_, "enc.0", 3, cfg.width, 3, rng));
    for (std::size_t l = 0; l < levels_; ++l)
      enc_.push_back(nn::Conv2d<float>::make(ps_, "enc." + std::to_string(l + 1), cfg.width, cfg.width, 3, rng));
    enc_out_ = nn::Conv2d<float>::make(ps_, "enc.out", cfg.width, cfg.latent_channels, 3, rng, 0.5);
    dec_.push_back(nn::Conv2d<float>::make(ps_, "dec.0", cfg.latent_channels, cfg.width, 3, rng));
    for (std::size_t l = 0; l < levels_; ++l)
      dec_.push_back(nn::Conv2d<float>::make(ps_, "dec." + std::to_string(l + 1), cfg.width, cfg.width, 3, rng));
    dec_out_ = nn::Conv2d<float>::make(ps_, "dec.out", cfg.width, 3, 3, rng, 0.5);
  }

  std::string kind() const override { return "autoencoder"; }
  std::size_t factor() const override { return cfg_.factor; }
  std::size_t latent_channels() const override { return cfg_.latent_channels; }
  nlohmann::json describe() const override {
    auto j = LatentCodec::describe();
    j["width"] = cfg_.width;
    j["seed"] = cfg_.seed;
    return j;
  }
  ag::ParamSet<float>* trainable() override { return &ps_; }
  const ag::ParamSet<float>* trainable() const override { return &ps_; }

  // Differentiable paths for training. Images are in [0,1]; decoder output
  // is in the same [-1,1] space the encoder consumes.
  ag::Var<float> encode_var(const ag::Var<float>& x_pm1) const {
    auto h = ag::silu(enc_[0](x_pm1));
    for (std::size_t l = 0; l < levels_; ++l) h = ag::silu(enc_[l + 1](ag::avg_pool(h, 2)));
    return enc_out_(h);
  }
  ag::Var<float> decode_var(const ag::Var<float>& z) const {
    auto h = ag::silu(dec_[0](z));
    for (std::size_t l = 0; l < levels_; ++l) h = ag::silu(dec_[l + 1](ag::upsample_nearest(h, 2)));
    return dec_out_(h);
  }

 protected:
  Tensor do_encode(const Tensor& images) const override {
    ag::NoGradGuard g;
    Tensor x = images;
    for (auto& v : x.vec()) v = 2.0f * v - 1.0f;
    return encode_var(ag::constant(std::move(x))).value();
  }
  Tensor do_decode(const Tensor& latents) const override {
    ag::NoGradGuard g;
    Tensor y = decode_var(ag::constant(latents)).value();
    for (auto& v : y.vec()) v = 0.5f * (v + 1.0f);
    return y;
  }

 private:
  AutoencoderConfig cfg_;
  std::size_t levels_ = 0;
  ag::ParamSet<float> ps_;
  std::vector<nn::Conv2d<float>> enc_, dec_;
  nn::Conv2d<float> enc_out_, dec_out_;
};

inline std::unique_ptr<LatentCodec> make_codec(const std::string& kind, std::size_t factor,
                                               std::size_t latent_channels = 4, std::uint64_t seed = 0) {
  if (kind == "identity") return std::make_unique<IdentityCodec>();
  if (kind == "pool") return std::make_unique<PoolCodec>(factor);
  if (kind == "unshuffle") return std::make_unique<UnshuffleCodec>(factor);
  if (kind == "autoencoder") return std::make_unique<AutoencoderCodec>(AutoencoderConfig{factor, latent_channels, 32, seed});
  throw std::invalid_argument("unknown codec kind '" + kind + "'");
}

inline std::unique_ptr<LatentCodec> load_codec(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "codec") throw FormatError(path.string() + ": not a codec checkpoint");
  const auto& d = ck.meta.at("codec");
  const std::string kind = d.at("kind");
  if (kind == "autoencoder") {
    AutoencoderConfig cfg{d.at("factor"), d.at("latent_channels"), d.at("width"), d.value("seed", std::uint64_t{0})};
    auto codec = std::make_unique<AutoencoderCodec>(cfg);
    load_params(*codec->trainable(), ck, path.string());
    return codec;
  }
  return make_codec(kind, d.at("factor").get<std::size_t>());
}

}  // namespace dicad
