#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "bbyol/errors.hpp"
#include "bbyol/sampler.hpp"
#include "test_util.hpp"

using namespace bbyol;

namespace {

SamplerConfig cfg_of(SamplerKind kind, double lr0 = 0.2, std::int64_t cycle = 50, std::int64_t total = 200) {
  SamplerConfig c;
  c.kind = kind;
  c.lr0 = lr0;
  c.cycle_len = cycle;
  c.total_steps = total;
  return c;
}

TwinArch tiny_arch() {
  TwinArch a;
  a.input_dim = 3;
  a.encoder_hidden = {4};
  a.embed_dim = 3;
  a.projector_hidden = 4;
  a.proj_dim = 2;
  a.predictor_hidden = 3;
  return a;
}

}  // namespace

TEST(Schedule, CosineAnchors) {
  const SamplerConfig c = cfg_of(SamplerKind::Csghmc);
  EXPECT_EQ(cyclic_lr(c, 0), 0.2);
  EXPECT_EQ(cyclic_lr(c, 50), 0.2);
  EXPECT_NEAR(cyclic_lr(c, 25), 0.1, 1e-15);
  const double last = 0.1 * (std::cos(49.0 * std::numbers::pi / 50.0) + 1.0);
  EXPECT_NEAR(cyclic_lr(c, 49), last, 1e-15);
  EXPECT_NEAR(cyclic_lr(c, 49) / 0.2, 0.000987, 1e-6);
}

TEST(Schedule, PeriodicAndBounded) {
  const SamplerConfig c = cfg_of(SamplerKind::SnapSgd, 0.3, 17, 1000);
  for (std::int64_t k = 0; k + 17 < 1000; ++k) {
    EXPECT_EQ(cyclic_lr(c, k), cyclic_lr(c, k + 17));
    EXPECT_GT(cyclic_lr(c, k), 0.0);
    EXPECT_LE(cyclic_lr(c, k), 0.3);
  }
}

TEST(Schedule, MapSgdIsConstant) {
  const SamplerConfig c = cfg_of(SamplerKind::MapSgd, 0.05);
  for (std::int64_t k = 0; k < 200; ++k) EXPECT_EQ(cyclic_lr(c, k), 0.05);
}

TEST(Schedule, OutOfRangeStepRejected) {
  const SamplerConfig c = cfg_of(SamplerKind::Csghmc);
  EXPECT_THROW(cyclic_lr(c, -1), ContractError);
  EXPECT_THROW(cyclic_lr(c, 200), ContractError);
}

TEST(Schedule, NoiseGateAtEightyPercent) {
  const SamplerConfig c = cfg_of(SamplerKind::Csghmc);
  for (std::int64_t k = 0; k < 200; ++k) EXPECT_EQ(noise_active(c, k), k % 50 >= 40) << k;
  for (SamplerKind quiet : {SamplerKind::MapSgd, SamplerKind::SnapSgd})
    for (std::int64_t k = 0; k < 200; ++k) EXPECT_FALSE(noise_active(cfg_of(quiet), k));
  SamplerConfig sgld = cfg_of(SamplerKind::Sgld);
  EXPECT_FALSE(noise_active(sgld, 39));
  EXPECT_TRUE(noise_active(sgld, 40));
}

TEST(Schedule, YieldsAtCycleEnds) {
  const SamplerConfig c = cfg_of(SamplerKind::Csghmc);
  EXPECT_TRUE(should_yield(c, 49));
  EXPECT_FALSE(should_yield(c, 48));
  int count = 0;
  for (std::int64_t k = 0; k < 200; ++k) count += should_yield(c, k);
  EXPECT_EQ(count, 4);
}

TEST(Config, Validation) {
  SamplerConfig c;
  c.beta = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.cycle_len = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SamplerConfig{};
  c.noise_start_frac = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_sampler_kind("adam"), ConfigError);
  for (SamplerKind k : {SamplerKind::MapSgd, SamplerKind::SnapSgd, SamplerKind::Sgld, SamplerKind::Sghmc,
                        SamplerKind::Csghmc})
    EXPECT_EQ(parse_sampler_kind(sampler_kind_name(k)), k);
}

TEST(Noise, DeterministicAndCounterBased) {
  NoiseSource a(5), b(5), c(6);
  std::vector<double> va(100), vb(100), vc(100);
  a.fill(va);
  b.fill(vb);
  c.fill(vc);
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
  EXPECT_EQ(a.counter(), 100u);
}

TEST(Noise, StandardNormalMoments) {
  NoiseSource src(17);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = src.next();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Noise, FixedHookReplays) {
  NoiseSource src = NoiseSource::fixed({1.0, -2.0});
  EXPECT_EQ(src.next(), 1.0);
  EXPECT_EQ(src.next(), -2.0);
  EXPECT_EQ(src.next(), 1.0);
  EXPECT_THROW(NoiseSource::fixed({}), ContractError);
}

TEST(Step, SgldZeroGradZeroNoiseIsIdentity) {
  SamplerConfig c = cfg_of(SamplerKind::Sgld);
  std::vector<double> theta{0.5, -1.5, 2.0};
  const auto before = theta;
  SamplerState st(3, 0);
  st.noise = NoiseSource::fixed({0.0});
  sgld_step(theta, st, std::vector<double>(3, 0.0), 0.1, c);
  EXPECT_EQ(theta, before);
}

TEST(Step, SgldArithmetic) {
  SamplerConfig c = cfg_of(SamplerKind::Sgld);
  c.n_dataset = 10;
  c.temperature = 0.5;
  std::vector<double> theta{1.0};
  SamplerState st(1, 0);
  st.noise = NoiseSource::fixed({2.0});
  sgld_step(theta, st, std::vector<double>{0.3}, 0.04, c);
  // 1 - (0.04/2)*10*0.3 + sqrt(0.5*0.04)*2
  EXPECT_NEAR(theta[0], 1.0 - 0.06 + std::sqrt(0.02) * 2.0, 1e-15);
}

TEST(Step, SghmcMomentumCarriesOver) {
  SamplerConfig c = cfg_of(SamplerKind::Sghmc);
  c.beta = 0.9;
  std::vector<double> theta{1.0, 2.0};
  SamplerState st(2, 0);
  st.momentum = {0.5, -1.0};
  st.noise = NoiseSource::fixed({0.0});
  sghmc_step(theta, st, std::vector<double>(2, 0.0), 0.1, c);
  EXPECT_DOUBLE_EQ(st.momentum[0], 0.45);
  EXPECT_DOUBLE_EQ(st.momentum[1], -0.9);
  EXPECT_DOUBLE_EQ(theta[0], 1.45);
  EXPECT_DOUBLE_EQ(theta[1], 1.1);
  sghmc_step(theta, st, std::vector<double>(2, 0.0), 0.1, c);
  EXPECT_DOUBLE_EQ(theta[0], 1.45 + 0.405);
}

TEST(Step, TemperedDriftVariant) {
  SamplerConfig c = cfg_of(SamplerKind::Sgld);
  c.temperature = 0.25;
  c.temper_drift = true;
  std::vector<double> theta{0.0};
  SamplerState st(1, 0);
  st.noise = NoiseSource::fixed({1.0});
  sgld_step(theta, st, std::vector<double>{1.0}, 0.04, c);
  EXPECT_NEAR(theta[0], -0.02 / 0.25 + std::sqrt(0.04), 1e-15);
}

TEST(Step, BetaZeroReproducesSgldBitwise) {
  SamplerConfig sg = cfg_of(SamplerKind::Sgld);
  SamplerConfig hm = cfg_of(SamplerKind::Sghmc);
  sg.temperature = hm.temperature = 0.3;
  hm.beta = 0.0;
  std::vector<double> a{0.7, -0.2}, b = a;
  SamplerState sa(2, 99), sb(2, 99);
  for (int k = 0; k < 10000; ++k) {
    const std::vector<double> ga{1.3 * a[0], 0.4 * a[1]}, gb{1.3 * b[0], 0.4 * b[1]};
    sgld_step(a, sa, ga, 0.05, sg);
    sghmc_step(b, sb, gb, 0.05, hm);
    ASSERT_EQ(a, b) << "step " << k;
  }
}

TEST(Step, DimensionMismatchRejected) {
  SamplerConfig c;
  std::vector<double> theta(3, 0.0);
  SamplerState st(2, 0);
  EXPECT_THROW(sgld_step(theta, st, std::vector<double>(2, 0.0), 0.1, c), DimensionError);
  EXPECT_THROW(sghmc_step(theta, st, std::vector<double>(3, 0.0), 0.1, c), DimensionError);
}

TEST(Sampler, StepFollowsScheduleAndGate) {
  SamplerConfig c = cfg_of(SamplerKind::Csghmc, 0.2, 10, 30);
  Sampler s(c, 2, 3);
  std::vector<double> theta{0.0, 0.0};
  for (std::int64_t k = 0; k < 30; ++k) {
    const StepInfo info = s.step(theta, std::vector<double>{0.0, 0.0});
    EXPECT_EQ(info.lr, cyclic_lr(c, k));
    EXPECT_EQ(info.noise, noise_active(c, k));
    if (k == 7) {
      EXPECT_EQ(theta, (std::vector<double>{0.0, 0.0}));  // no noise before 80% of the first cycle
    }
  }
  EXPECT_NE(theta, (std::vector<double>{0.0, 0.0}));
}

TEST(Sampler, MapSgdIsDeterministicDescent) {
  SamplerConfig c = cfg_of(SamplerKind::MapSgd, 0.1, 10, 100);
  c.beta = 0.5;
  Sampler s(c, 1, 3);
  std::vector<double> theta{4.0};
  for (int k = 0; k < 100; ++k) s.step(theta, std::vector<double>{theta[0]});
  EXPECT_LT(std::abs(theta[0]), 1e-3);
}

TEST(PosteriorGrad, PriorOnEncoderOnly) {
  TwinModel m = init_twin(tiny_arch(), 4);
  std::mt19937_64 rng(1);
  const ad::Tensor a = testutil::random_matrix(3, 3, rng), b = testutil::random_matrix(3, 3, rng);
  SamplerConfig c;
  c.n_dataset = 50;
  c.prior_std = 2.0;
  TwinModel ref = m;
  byol_loss_and_grad(ref, a, b);
  const auto lik = ref.online_grad();
  const PosteriorGradient pg = posterior_grad(m, a, b, c);
  const auto theta = m.online_values();
  const std::size_t enc = m.online_encoder.total_dim();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double prior = i < enc ? theta[i] / (50.0 * 4.0) : 0.0;
    EXPECT_NEAR(pg.grad[i], lik[i] + prior, 1e-15);
  }
}

TEST(PosteriorGrad, PriorTermExample) {
  // Encoder of two parameters, theta_enc = (1, -2), prior_std = 1: prior adds (1, -2)/n.
  TwinArch a;
  a.input_dim = 1;
  a.encoder_hidden = {};
  a.embed_dim = 1;
  a.projector_hidden = 2;
  a.proj_dim = 2;
  a.predictor_hidden = 2;
  TwinModel m = init_twin(a, 2);
  auto enc = m.online_encoder.values();
  ASSERT_EQ(enc.size(), 2u);
  enc[0] = 1.0;
  enc[1] = -2.0;
  const ad::Tensor x = ad::Tensor::matrix(2, 1, {0.5, -0.5});
  TwinModel ref = m;
  byol_loss_and_grad(ref, x, x);
  for (std::int64_t n : {1, 10, 1000000}) {
    SamplerConfig c;
    c.n_dataset = n;
    TwinModel work = m;
    const PosteriorGradient pg = posterior_grad(work, x, x, c);
    EXPECT_NEAR(pg.grad[0] - ref.online_grad()[0], 1.0 / static_cast<double>(n), 1e-15);
    EXPECT_NEAR(pg.grad[1] - ref.online_grad()[1], -2.0 / static_cast<double>(n), 1e-15);
  }
}

TEST(PosteriorGrad, EmptyBatchRejected) {
  TwinModel m = init_twin(tiny_arch(), 4);
  EXPECT_THROW(posterior_grad(m, ad::Tensor::matrix(0, 3, {}), ad::Tensor::matrix(0, 3, {}), SamplerConfig{}),
               Error);
}
