#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dicad/reconstruction.hpp"
#include "dicad/synthetic.hpp"

using namespace dicad;

namespace {

// Knows the clean latent, so it can return the exact noise in any z_t.
class OracleDenoiser final : public Denoiser<float> {
 public:
  OracleDenoiser(Tensor z0, const NoiseSchedule& s) : z0_(std::move(z0)), s_(s) {}
  ag::Var<float> forward(const ag::Var<float>& zt, std::span<const int> steps) const override {
    Tensor out(zt.shape());
    const float ab = s_.alpha_bar(steps[0]);
    const float a = std::sqrt(ab), b = std::sqrt(1.0f - ab);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (zt.value()[i] - a * z0_[i]) / b;
    return ag::constant(std::move(out));
  }
  ag::ParamSet<float>& params() override { return ps_; }
  const ag::ParamSet<float>& params() const override { return ps_; }
  nlohmann::json architecture() const override { return {{"type", "oracle"}}; }

 private:
  Tensor z0_;
  const NoiseSchedule& s_;
  ag::ParamSet<float> ps_;
};

float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor sample_image(std::uint64_t i) {
  SyntheticSpec s;
  s.size = 32;
  return synthetic_nominal(s, 1, i).image;
}

const NoiseSchedule& schedule() {
  static const auto s = NoiseSchedule::linear(0.0015f, 0.0195f, 1000);
  return s;
}

}  // namespace

TEST(Reconstruction, OracleDenoiserRollsBackExactly) {
  const auto codec = make_codec("identity", 1);
  const Tensor x = sample_image(0);
  OracleDenoiser oracle(x, schedule());
  ReconstructionModels m{&oracle, codec.get(), nullptr, &schedule(), nullptr, nullptr};
  ReconstructionConfig cfg;
  cfg.guidance.eta = 0;
  const auto r = reconstruct_at(x, 10, m, cfg);
  EXPECT_LT(max_abs_diff(r.z_hat, r.z0), 1e-4f);
  EXPECT_LT(max_abs_diff(r.x_hat, x), 1e-4f);

  // Also from a fully noised start and with guidance on.
  cfg.omega = 1.0f;
  cfg.guidance.eta = 8;
  cfg.noise_seed = 3;
  const auto r2 = reconstruct_at(x, 80, m, cfg);
  EXPECT_LT(max_abs_diff(r2.z_hat, r2.z0), 1e-4f);
}

TEST(Reconstruction, NoiselessStartIsScaledLatent) {
  const auto codec = make_codec("pool", 4);
  UNetDenoiser<float> net({3, 8, 2, 16, 1});
  ReconstructionModels m{&net, codec.get(), nullptr, &schedule(), nullptr, nullptr};
  ReconstructionConfig cfg;
  for (int t : {10, 40, 80}) {
    const auto r = reconstruct_at(sample_image(1), t, m, cfg);
    const float a = std::sqrt(schedule().alpha_bar(t));
    for (std::size_t i = 0; i < r.z0.size(); ++i) EXPECT_NEAR(r.z_start[i] / a, r.z0[i], 1e-6f * (1 + std::abs(r.z0[i])));
  }
}

TEST(Reconstruction, TraceFollowsSubsequence) {
  const auto codec = make_codec("pool", 4);
  UNetDenoiser<float> net({3, 8, 2, 16, 1});
  ReconstructionModels m{&net, codec.get(), nullptr, &schedule(), nullptr, nullptr};
  ReconstructionConfig cfg;
  cfg.keep_trace = true;
  EXPECT_EQ(reconstruct_at(sample_image(2), 80, m, cfg).trace.size(), 10u);
  EXPECT_EQ(reconstruct_at(sample_image(2), 5, m, cfg).trace.size(), 5u);
  cfg.keep_trace = false;
  EXPECT_TRUE(reconstruct_at(sample_image(2), 80, m, cfg).trace.empty());
}

TEST(Reconstruction, DeterministicAcrossRuns) {
  const auto codec = make_codec("unshuffle", 4);
  UNetDenoiser<float> net({48, 8, 2, 16, 2});
  FeatureExtractor phi(BackboneConfig{});
  std::vector<Tensor> train;
  for (std::uint64_t i = 0; i < 25; ++i) train.push_back(sample_image(10 + i));
  const auto idx = build_feature_index(train, phi, 2, 20);
  const auto bins = build_bins(training_mean_distances(idx), 10, 80, 2);
  ReconstructionModels m{&net, codec.get(), &phi, &schedule(), &idx, &bins};
  ReconstructionConfig cfg;
  const auto a = reconstruct(sample_image(3), m, cfg), b = reconstruct(sample_image(3), m, cfg);
  EXPECT_EQ(a.x_hat, b.x_hat);
  EXPECT_EQ(a.z_hat, b.z_hat);
  EXPECT_EQ(a.t_hat, b.t_hat);
  ASSERT_TRUE(a.dic.has_value());
  EXPECT_EQ(a.dic->t_hat, a.t_hat);

  // omega > 0 draws noise from the seed, so it is still repeatable.
  cfg.omega = 0.5f;
  cfg.noise_seed = 42;
  EXPECT_EQ(reconstruct(sample_image(3), m, cfg).x_hat, reconstruct(sample_image(3), m, cfg).x_hat);
}

TEST(Reconstruction, StaticAtTmaxMatchesTopBin) {
  const auto codec = make_codec("pool", 4);
  UNetDenoiser<float> net({3, 8, 2, 16, 3});
  FeatureExtractor phi(BackboneConfig{});
  std::vector<Tensor> train;
  for (std::uint64_t i = 0; i < 25; ++i) train.push_back(sample_image(40 + i));
  const auto idx = build_feature_index(train, phi, 2, 20);
  // Place every realistic distance in the last bin.
  BinTable bins;
  bins.edges = {0, 1e-9, 2e-9, 3e-9, 4e-9, 5e-9, 6e-9, 7e-9, 8e-9, 9e-9, 1e-8};
  ReconstructionModels m{&net, codec.get(), &phi, &schedule(), &idx, &bins};
  ReconstructionConfig cfg;
  const Tensor x = synthetic_anomaly(SyntheticSpec{.size = 32}, "missing", 0).image;
  const auto dyn = reconstruct(x, m, cfg);
  ASSERT_EQ(dyn.dic->bin, 10);
  const auto st = reconstruct_static(x, 80, m, cfg);
  EXPECT_EQ(dyn.t_hat, 80);
  EXPECT_EQ(st.x_hat, dyn.x_hat);
  EXPECT_EQ(st.z_hat, dyn.z_hat);
}

TEST(Reconstruction, Errors) {
  const auto codec = make_codec("pool", 4);
  UNetDenoiser<float> net({3, 8, 2, 16, 3});
  FeatureExtractor phi(BackboneConfig{});
  const Tensor x = sample_image(4);
  ReconstructionModels bare{&net, codec.get(), &phi, &schedule(), nullptr, nullptr};
  ReconstructionConfig cfg;
  EXPECT_THROW(reconstruct(x, bare, cfg), std::logic_error);
  EXPECT_THROW(reconstruct_static(x, 81, bare, cfg), std::invalid_argument);
  EXPECT_THROW(reconstruct_static(x, 0, bare, cfg), std::invalid_argument);
  EXPECT_NO_THROW(reconstruct_static(x, 80, bare, cfg));

  std::vector<Tensor> train{sample_image(5), sample_image(6), sample_image(7)};
  const auto idx = build_feature_index(train, phi, 3, 2);
  BinTable bins;
  bins.edges = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  ReconstructionModels m{&net, codec.get(), &phi, &schedule(), &idx, &bins};
  EXPECT_THROW(reconstruct(x, m, cfg), std::invalid_argument);  // index block 3, config block 2

  ReconstructionModels no_net{nullptr, codec.get(), nullptr, &schedule(), nullptr, nullptr};
  EXPECT_THROW(reconstruct_at(x, 10, no_net, cfg), std::logic_error);
  EXPECT_THROW(reconstruct_at(x, 1001, bare, cfg), std::out_of_range);
}
