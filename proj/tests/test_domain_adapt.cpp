#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dicad/domain_adapt.hpp"
#include "dicad/imaging.hpp"
#include "dicad/reconstruction.hpp"
#include "dicad/synthetic.hpp"

using namespace dicad;

namespace {

std::vector<Tensor> nominal(std::size_t n, std::uint64_t seed) {
  SyntheticSpec s;
  s.size = 32;
  s.seed = seed;
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic_nominal(s, 1, i).image);
  return out;
}

// Per-channel blur as a cheap stand-in for an imperfect reconstruction.
Tensor soften(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t hw = x.dim(1) * x.dim(2);
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    Tensor ch(Shape{x.dim(1), x.dim(2)});
    std::copy(x.data() + c * hw, x.data() + (c + 1) * hw, ch.data());
    const Tensor b = gaussian_blur(ch, 1.5);
    std::copy(b.data(), b.data() + hw, out.data() + c * hw);
  }
  return out;
}

double loss_of(const std::vector<ag::Var<double>>& a, const std::vector<ag::Var<double>>& b) {
  ag::NoGradGuard g;
  return lda_loss_features<double>(a, b).value()[0];
}

}  // namespace

TEST(LdaLoss, Examples) {
  FeatureExtractor phi(BackboneConfig{});
  const Tensor x = nominal(1, 1)[0];
  const std::vector<int> blocks{2, 3};
  EXPECT_NEAR(lda_loss(x, x, phi, blocks), 0.0, 1e-6);

  const std::vector<ag::Var<double>> a{ag::constant(basic_tensor<double>(Shape{1, 2, 2, 2}, {1, 1, 0, 0, 0, 0, 1, 1}))};
  const std::vector<ag::Var<double>> b{ag::constant(basic_tensor<double>(Shape{1, 2, 2, 2}, {0, 0, 1, 1, 1, 1, 0, 0}))};
  EXPECT_NEAR(loss_of(a, b), 1.0, 1e-12);

  const basic_tensor<double> p(Shape{1, 3, 1, 2}, {1, 2, -1, 0.5, 3, 1});
  basic_tensor<double> q = p;
  for (auto& v : q.vec()) v *= -2.5;
  const std::vector<ag::Var<double>> pa{ag::constant(p), ag::constant(p)}, qa{ag::constant(q), ag::constant(q)};
  EXPECT_NEAR(loss_of(pa, qa), 4.0, 1e-12);
}

TEST(LdaLoss, SymmetricAndBounded) {
  FeatureExtractor phi(BackboneConfig{});
  const auto imgs = nominal(6, 2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0, 1);
  for (std::size_t i = 0; i + 1 < imgs.size(); ++i) {
    Tensor noise(imgs[i].shape());
    for (auto& v : noise.vec()) v = u(rng);
    for (const auto& other : {imgs[i + 1], noise}) {
      const std::vector<int> blocks{1, 2, 3};
      const double ab = lda_loss(imgs[i], other, phi, blocks), ba = lda_loss(other, imgs[i], phi, blocks);
      EXPECT_NEAR(ab, ba, 1e-6);
      EXPECT_GE(ab, 0.0);
      EXPECT_LE(ab, 6.0);
    }
  }
  // zero feature vectors stay finite through the epsilon
  const std::vector<ag::Var<double>> z{ag::constant(basic_tensor<double>(Shape{1, 3, 2, 2}))};
  EXPECT_NEAR(loss_of(z, z), 1.0, 1e-12);
}

TEST(LdaLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  basic_tensor<double> fa(Shape{1, 3, 2, 2}), fb(Shape{1, 3, 2, 2});
  for (auto& v : fa.vec()) v = n(rng);
  for (auto& v : fb.vec()) v = n(rng);
  ag::Var<double> va(fa, true), vb(fb, true);
  const std::vector<ag::Var<double>> sa{va}, sb{vb};
  auto loss = lda_loss_features<double>(sa, sb);
  ag::backward(loss);
  const double h = 1e-5;
  for (int side = 0; side < 2; ++side) {
    const auto& var = side ? vb : va;
    for (std::size_t i = 0; i < fa.size(); ++i) {
      auto plus = fa, minus = fa, bp = fb, bm = fb;
      if (side) {
        bp[i] += h;
        bm[i] -= h;
      } else {
        plus[i] += h;
        minus[i] -= h;
      }
      const double fd = (loss_of({ag::constant(plus)}, {ag::constant(bp)}) - loss_of({ag::constant(minus)}, {ag::constant(bm)})) / (2 * h);
      const double an = var.grad()[i];
      EXPECT_LT(std::abs(an - fd) / std::max(std::abs(fd), 1e-8), 1e-4) << side << " " << i;
    }
  }
}

TEST(Finetune, GammaZeroIsIdentity) {
  FeatureExtractor phi(BackboneConfig{});
  const auto imgs = nominal(4, 5);
  DomainAdaptConfig cfg;
  cfg.gamma = 0;
  int calls = 0;
  const auto r = finetune_extractor(phi, imgs, [&](const Tensor& x) { ++calls; return x; }, cfg);
  EXPECT_EQ(r.phi.digest(), phi.digest());
  EXPECT_TRUE(r.epoch_loss.empty());
  EXPECT_EQ(calls, 0);
}

TEST(Finetune, OneEpochLowersLossAndLeavesPipelineUntouched) {
  FeatureExtractor phi(BackboneConfig{});
  const auto imgs = nominal(32, 6);
  const auto schedule = NoiseSchedule::linear(0.0015f, 0.0195f, 1000);
  const auto codec = make_codec("pool", 4);
  UNetDenoiser<float> net({3, 8, 2, 16, 7});
  const auto net_before = params_digest(net.params());
  ReconstructionModels m{&net, codec.get(), nullptr, &schedule, nullptr, nullptr};
  ReconstructionConfig rc;
  int calls = 0;
  auto pipeline = [&](const Tensor& x) {
    ++calls;
    return soften(reconstruct_at(x, 20, m, rc).x_hat);
  };
  DomainAdaptConfig cfg;
  cfg.gamma = 1;
  cfg.learning_rate = 1e-3;
  const auto r = finetune_extractor(phi, imgs, pipeline, cfg);
  EXPECT_EQ(calls, 32);
  EXPECT_EQ(params_digest(net.params()), net_before);
  EXPECT_NE(r.phi.digest(), phi.digest());
  ASSERT_EQ(r.reconstructions.size(), imgs.size());

  double before = 0, after = 0;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    before += lda_loss(imgs[i], r.reconstructions[i], phi, cfg.blocks);
    after += lda_loss(imgs[i], r.reconstructions[i], r.phi, cfg.blocks);
  }
  EXPECT_LT(after, before);

  // Cached reconstructions skip the pipeline and give the same result.
  calls = 0;
  const auto again = finetune_extractor(phi, imgs, pipeline, cfg, r.reconstructions);
  EXPECT_EQ(calls, 0);
  EXPECT_EQ(again.phi.digest(), r.phi.digest());
}

TEST(Finetune, Errors) {
  FeatureExtractor phi(BackboneConfig{});
  const auto imgs = nominal(2, 8);
  auto id = [](const Tensor& x) { return x; };
  DomainAdaptConfig cfg;
  cfg.gamma = -1;
  EXPECT_THROW(finetune_extractor(phi, imgs, id, cfg), std::invalid_argument);
  cfg.gamma = 1;
  cfg.blocks = {};
  EXPECT_THROW(finetune_extractor(phi, imgs, id, cfg), std::invalid_argument);
  cfg.blocks = {9};
  EXPECT_THROW(finetune_extractor(phi, imgs, id, cfg), std::out_of_range);
  cfg.blocks = {2};
  EXPECT_THROW(finetune_extractor(phi, imgs, id, cfg, {imgs[0]}), std::invalid_argument);
  EXPECT_THROW(finetune_extractor(phi, std::vector<Tensor>{}, id, cfg), std::invalid_argument);
}
