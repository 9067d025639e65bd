#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dicad/diffusion_math.hpp"

using namespace dicad;

namespace {

NoiseSchedule reference_schedule() { return NoiseSchedule::linear(0.0015f, 0.0195f, 1000); }

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return randn<float>(s, rng);
}

}  // namespace

TEST(Schedule, ReferenceEndpoints) {
  const auto s = reference_schedule();
  EXPECT_EQ(s.steps(), 1000);
  EXPECT_FLOAT_EQ(s.beta(1), 0.0015f);
  EXPECT_FLOAT_EQ(s.beta(1000), 0.0195f);
  EXPECT_EQ(s.alpha_bar(0), 1.0f);
}

TEST(Schedule, ThreeStepExample) {
  const auto s = NoiseSchedule::linear(0.1f, 0.3f, 3);
  EXPECT_NEAR(s.beta(1), 0.1, 1e-7);
  EXPECT_NEAR(s.beta(2), 0.2, 1e-7);
  EXPECT_NEAR(s.beta(3), 0.3, 1e-7);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-6);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-6);
  EXPECT_NEAR(s.alpha_bar(3), 0.504, 1e-6);
}

TEST(Schedule, SingleStep) {
  const auto s = NoiseSchedule::linear(0.2f, 0.2f, 1);
  EXPECT_FLOAT_EQ(s.beta(1), 0.2f);
  EXPECT_NEAR(s.alpha_bar(1), 0.8, 1e-7);
}

TEST(Schedule, Invariants) {
  const auto s = reference_schedule();
  for (int t = 1; t <= s.steps(); ++t) {
    EXPECT_GT(s.beta(t), 0.0f);
    EXPECT_LT(s.beta(t), 1.0f);
    EXPECT_EQ(s.alpha(t), 1.0f - s.beta(t));
    EXPECT_EQ(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
    if (t > 1) {
      EXPECT_LE(s.beta(t - 1), s.beta(t));
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
    EXPECT_GT(s.alpha_bar(t), 0.0f);
  }
  EXPECT_EQ(s.alpha_bar(1), s.alpha(1));
}

TEST(Schedule, RejectsBadInput) {
  EXPECT_THROW(NoiseSchedule::linear(0.3f, 0.1f, 10), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(0.0f, 0.1f, 10), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(0.1f, 1.0f, 10), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(0.1f, 0.2f, 0), std::invalid_argument);
}

TEST(ForwardSample, NoiselessScaling) {
  // step whose alpha_bar is 0.25: a single-step schedule with beta 0.75
  const auto s = NoiseSchedule::linear(0.75f, 0.75f, 1);
  const Tensor x = random_tensor({2, 3, 3}, 1), e = random_tensor({2, 3, 3}, 2);
  const Tensor out = forward_sample(x, 1, e, s, 0.0f);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(out[i], 0.5f * x[i]);
}

TEST(ForwardSample, ZeroSignal) {
  const auto s = reference_schedule();
  const Tensor x(Shape{4, 4}), e = random_tensor({4, 4}, 3);
  const Tensor out = forward_sample(x, 500, e, s, 1.0f);
  const float k = std::sqrt(1.0f - s.alpha_bar(500));
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(out[i], k * e[i], 1e-6);
}

TEST(ForwardSample, OmegaZeroIgnoresNoiseBitwise) {
  const auto s = reference_schedule();
  const Tensor x = random_tensor({3, 8, 8}, 4);
  for (int t : {1, 20, 80, 999})
    EXPECT_EQ(forward_sample(x, t, random_tensor({3, 8, 8}, 5), s, 0.0f),
              forward_sample(x, t, random_tensor({3, 8, 8}, 6), s, 0.0f));
}

TEST(ForwardSample, Errors) {
  const auto s = reference_schedule();
  EXPECT_THROW(forward_sample(Tensor(Shape{2}), 1, Tensor(Shape{3}), s), std::invalid_argument);
  EXPECT_THROW(forward_sample(Tensor(Shape{2}), 0, Tensor(Shape{2}), s), std::out_of_range);
  EXPECT_THROW(forward_sample(Tensor(Shape{2}), 1001, Tensor(Shape{2}), s), std::out_of_range);
}

TEST(X0Estimate, RoundTrip) {
  const auto s = reference_schedule();
  std::mt19937_64 rng(7);
  for (int t = 1; t <= 1000; t += 37) {
    // near T, sqrt(abar) ~ 5e-3 so a float x_t cannot hold x0 to 1e-5; run in double
    const auto x = randn<double>({3, 5, 5}, rng), e = randn<double>({3, 5, 5}, rng);
    const auto back = x0_estimate(forward_sample(x, t, e, s, 1.0f), e, t, s);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-5 * std::max(1.0, std::abs(x[i]))) << t;
  }
}

TEST(X0Estimate, ZeroNoiseAndScalar) {
  const auto s = reference_schedule();
  const Tensor xt = random_tensor({6}, 8);
  const Tensor out = x0_estimate(xt, Tensor(Shape{6}), 300, s);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], xt[i] / std::sqrt(s.alpha_bar(300)), 1e-6);

  const auto s64 = NoiseSchedule::linear(0.36f, 0.36f, 1);  // alpha_bar 0.64
  const Tensor r = x0_estimate(Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.5f), 1, s64);
  EXPECT_NEAR(r[0], 0.875f, 1e-6);
}

TEST(GuidedEps, EtaZeroIsIdentity) {
  const auto s = reference_schedule();
  const Tensor e = random_tensor({10}, 9);
  EXPECT_EQ(guided_eps(e, random_tensor({10}, 10), random_tensor({10}, 11), 40, s, {0.0f, 0.0f}), e);
}

TEST(GuidedEps, PerfectAgreementIsIdentity) {
  const auto s = reference_schedule();
  const Tensor e = random_tensor({10}, 12), z0 = random_tensor({10}, 13);
  const Tensor zt = forward_sample(z0, 40, e, s, 1.0f);
  const Tensor g = guided_eps(e, zt, z0, 40, s, {8.0f, 0.0f});
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(g[i], e[i], 1e-5);
}

TEST(GuidedEps, ScalarExample) {
  const auto s = NoiseSchedule::linear(0.25f, 0.25f, 1);  // alpha_bar 0.75
  // independent evaluation in double
  const double ab = 0.75, tilde = std::sqrt(ab) * 0.4 + std::sqrt(1 - ab) * 1.0;
  const double expect = 1.0 - 8.0 * std::sqrt(1 - ab) * (tilde - 0.2);
  EXPECT_NEAR(expect, -1.5856, 1e-4);
  const Tensor g = guided_eps(Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.2f), Tensor(Shape{1}, 0.4f), 1, s, {8.0f, 0.0f});
  EXPECT_NEAR(g[0], expect, 1e-5);
}

TEST(GuidedEps, ShapeMismatch) {
  const auto s = reference_schedule();
  EXPECT_THROW(guided_eps(Tensor(Shape{2}), Tensor(Shape{3}), Tensor(Shape{2}), 1, s, {}), std::invalid_argument);
}

TEST(DdimStep, TrueNoiseSubstitution) {
  const auto s = reference_schedule();
  const Tensor x0 = random_tensor({12}, 14), e = random_tensor({12}, 15);
  const Tensor xt = forward_sample(x0, 80, e, s, 1.0f);
  const Tensor out = ddim_step(xt, e, 80, 72, s, {0.0f, 0.0f});
  const float a = std::sqrt(s.alpha_bar(72)), b = std::sqrt(1.0f - s.alpha_bar(72));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out[i], a * x0[i] + b * e[i], 1e-5);
}

TEST(DdimStep, DeterministicBitwise) {
  const auto s = reference_schedule();
  const Tensor x = random_tensor({3, 4, 4}, 16), e = random_tensor({3, 4, 4}, 17);
  EXPECT_EQ(ddim_step(x, e, 40, 32, s, {8.0f, 0.0f}), ddim_step(x, e, 40, 32, s, {8.0f, 0.0f}));
}

TEST(DdimStep, Errors) {
  const auto s = reference_schedule();
  const Tensor x(Shape{4});
  EXPECT_THROW(ddim_step(x, x, 10, 10, s, {}), std::invalid_argument);
  EXPECT_THROW(ddim_step(x, x, 10, 20, s, {}), std::invalid_argument);
  EXPECT_THROW(ddim_step(x, x, 10, 0, s, {0.0f, 0.5f}, &x), std::invalid_argument);  // sigma^2 > 1 - abar(0) = 0
  EXPECT_THROW(ddim_step(x, x, 10, 5, s, {0.0f, 0.01f}), std::invalid_argument);     // missing noise
}

TEST(DdimStep, OracleRolloutRecoversInput) {
  const auto s = reference_schedule();
  const Tensor x0 = random_tensor({4, 6, 6}, 18), e = random_tensor({4, 6, 6}, 19);
  const auto taus = make_subsequence(80, 10);
  Tensor x = forward_sample(x0, taus.back(), e, s, 1.0f);
  for (std::size_t i = taus.size(); i-- > 0;) {
    const int t = taus[i], prev = i ? taus[i - 1] : 0;
    // oracle: noise implied by x and the known clean signal
    Tensor eps(x.shape());
    const double ab = s.alpha_bar(t);
    for (std::size_t k = 0; k < x.size(); ++k) eps[k] = float((x[k] - std::sqrt(ab) * x0[k]) / std::sqrt(1 - ab));
    x = ddim_step(x, eps, t, prev, s, {0.0f, 0.0f});
  }
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(x[k], x0[k], 1e-4);
}

TEST(Subsequence, Examples) {
  EXPECT_EQ(make_subsequence(80, 10), (std::vector<int>{8, 16, 24, 32, 40, 48, 56, 64, 72, 80}));
  EXPECT_EQ(make_subsequence(20, 10), (std::vector<int>{2, 4, 6, 8, 10, 12, 14, 16, 18, 20}));
  EXPECT_EQ(make_subsequence(5, 10), (std::vector<int>{1, 2, 3, 4, 5}));
}

TEST(Subsequence, Properties) {
  for (int th = 1; th <= 200; ++th)
    for (int S : {1, 3, 10, 17}) {
      const auto v = make_subsequence(th, S);
      EXPECT_EQ(v.back(), th);
      EXPECT_GE(v.front(), 1);
      EXPECT_LE(int(v.size()), S);
      for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LT(v[i - 1], v[i]);
      if (S <= th) EXPECT_EQ(int(v.size()), S);
    }
  EXPECT_THROW(make_subsequence(0, 10), std::invalid_argument);
  EXPECT_THROW(make_subsequence(10, 0), std::invalid_argument);
}

TEST(ForwardSample, ChainMatchesDirectMonteCarlo) {
  const auto s = NoiseSchedule::linear(0.0015f, 0.0195f, 1000);
  const int t = 50, draws = 20000;
  const double x0 = 0.7;
  std::mt19937_64 rng(20);
  std::normal_distribution<double> n(0, 1);
  double m_chain = 0, v_chain = 0, m_direct = 0, v_direct = 0;
  std::vector<double> chain(draws), direct(draws);
  for (int d = 0; d < draws; ++d) {
    double x = x0;
    for (int k = 1; k <= t; ++k) x = std::sqrt(1.0 - s.beta(k)) * x + std::sqrt(double(s.beta(k))) * n(rng);
    chain[std::size_t(d)] = x;
    const Tensor e(Shape{1}, float(n(rng)));
    direct[std::size_t(d)] = forward_sample(Tensor(Shape{1}, float(x0)), t, e, s, 1.0f)[0];
  }
  for (int d = 0; d < draws; ++d) {
    m_chain += chain[std::size_t(d)] / draws;
    m_direct += direct[std::size_t(d)] / draws;
  }
  for (int d = 0; d < draws; ++d) {
    v_chain += std::pow(chain[std::size_t(d)] - m_chain, 2) / (draws - 1);
    v_direct += std::pow(direct[std::size_t(d)] - m_direct, 2) / (draws - 1);
  }
  const double se_mean = std::sqrt(v_chain / draws + v_direct / draws);
  EXPECT_LT(std::abs(m_chain - m_direct), 3 * se_mean);
  // variance of a sample variance for Gaussian data: 2 sigma^4 / (n - 1)
  const double se_var = std::sqrt(2 * v_chain * v_chain / (draws - 1) + 2 * v_direct * v_direct / (draws - 1));
  EXPECT_LT(std::abs(v_chain - v_direct), 3 * se_var);
  EXPECT_NEAR(v_direct, 1.0 - s.alpha_bar(t), 3 * std::sqrt(2.0 / (draws - 1)) * (1.0 - s.alpha_bar(t)));
}
