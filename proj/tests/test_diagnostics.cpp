#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bbyol/diagnostics.hpp"
#include "bbyol/errors.hpp"

using namespace bbyol;

namespace {

SamplerConfig chain_cfg(SamplerKind kind, double lr, double beta = 0.0) {
  SamplerConfig c;
  c.kind = kind;
  c.lr0 = lr;
  c.beta = beta;
  return c;
}

Eigen::MatrixXd random_spd(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = g(rng);
  Eigen::MatrixXd spd = a * a.transpose() / static_cast<double>(d);
  spd.diagonal().array() += 0.5;
  return spd;
}

}  // namespace

TEST(Quadratic, GradExamples) {
  const QuadraticTarget t = QuadraticTarget::isotropic(2, 1.0);
  EXPECT_EQ(quadratic_grad(t, std::vector<double>{1.0, -2.0}), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(quadratic_grad(t, std::vector<double>{0.0, 0.0}), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(quadratic_grad(t, std::vector<double>{1.0}), DimensionError);
}

TEST(Quadratic, GradMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    QuadraticTarget t;
    t.precision = random_spd(4, rng);
    std::vector<double> theta(4);
    for (double& v : theta) v = g(rng);
    auto energy = [&](const std::vector<double>& th) {
      const Eigen::Map<const Eigen::VectorXd> v(th.data(), 4);
      return 0.5 * v.dot(t.precision * v);
    };
    const auto grad = quadratic_grad(t, theta);
    for (std::size_t i = 0; i < 4; ++i) {
      auto up = theta, dn = theta;
      up[i] += 1e-5;
      dn[i] -= 1e-5;
      EXPECT_NEAR(grad[i], (energy(up) - energy(dn)) / 2e-5, 1e-7);
    }
  }
}

TEST(Quadratic, ValidationRejectsNonSpd) {
  QuadraticTarget t;
  t.precision = Eigen::MatrixXd::Identity(2, 2);
  t.precision(1, 1) = -1.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t.precision = Eigen::MatrixXd::Identity(2, 2);
  t.precision(0, 1) = 0.5;
  EXPECT_THROW(t.validate(), ConfigError);
  t.precision = Eigen::MatrixXd(2, 3);
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Quadratic, CovarianceIsTemperatureOverPrecision) {
  QuadraticTarget t;
  t.precision = Eigen::MatrixXd::Identity(2, 2) * 4.0;
  t.temperature = 0.2;
  EXPECT_NEAR(t.covariance()(0, 0), 0.05, 1e-15);
  EXPECT_NEAR(t.covariance()(0, 1), 0.0, 1e-15);
}

TEST(Chain, SgldUnitTemperature) {
  const ChainStats s = run_chain(chain_cfg(SamplerKind::Sgld, 0.01), QuadraticTarget::isotropic(1, 1.0), 200000,
                                 10000, 1);
  EXPECT_GE(s.variance[0], 0.9);
  EXPECT_LE(s.variance[0], 1.1);
  EXPECT_NEAR(s.mean[0], 0.0, 0.15);
  EXPECT_EQ(s.sample_count, 190000u);
}

TEST(Chain, SgldColdTemperature) {
  const ChainStats s = run_chain(chain_cfg(SamplerKind::Sgld, 0.01), QuadraticTarget::isotropic(1, 0.1), 200000,
                                 10000, 1);
  EXPECT_GE(s.variance[0], 0.09);
  EXPECT_LE(s.variance[0], 0.11);
}

TEST(Chain, SghmcWithMomentum) {
  const ChainStats s = run_chain(chain_cfg(SamplerKind::Sghmc, 0.01, 0.9), QuadraticTarget::isotropic(1, 1.0),
                                 200000, 10000, 1);
  EXPECT_GE(s.variance[0], 0.85);
  EXPECT_LE(s.variance[0], 1.15);
}

TEST(Chain, AnisotropicTargetMatchesCovarianceDiagonal) {
  QuadraticTarget t;
  t.precision = Eigen::MatrixXd::Zero(2, 2);
  t.precision(0, 0) = 1.0;
  t.precision(1, 1) = 4.0;
  t.temperature = 0.5;
  const ChainStats s = run_chain(chain_cfg(SamplerKind::Sgld, 0.01), t, 200000, 10000, 2);
  EXPECT_NEAR(s.variance[0] / 0.5, 1.0, 0.1);
  EXPECT_NEAR(s.variance[1] / 0.125, 1.0, 0.1);
}

TEST(Chain, LagOneMatchesAr1Coefficient) {
  // SGLD on the unit quadratic is an AR(1) process with coefficient 1 - lr/2.
  const ChainStats s = run_chain(chain_cfg(SamplerKind::Sgld, 0.2), QuadraticTarget::isotropic(1, 1.0), 100000,
                                 1000, 4);
  EXPECT_NEAR(s.lag1[0], 0.9, 0.01);
}

TEST(Chain, DivergenceIsReported) {
  // SGLD on the unit quadratic is stable only for lr < 4.
  try {
    run_chain(chain_cfg(SamplerKind::Sgld, 5.0), QuadraticTarget::isotropic(1, 1.0), 10000, 0, 1);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0);
    EXPECT_LT(e.step(), 10000);
    EXPECT_EQ(e.exit_code(), 3);
  }
  EXPECT_NO_THROW(run_chain(chain_cfg(SamplerKind::Sgld, 2.0), QuadraticTarget::isotropic(1, 1.0), 10000, 0, 1));
}

TEST(Chain, RecordedTrajectoryAndDeterminism) {
  std::vector<double> t1, t2;
  const SamplerConfig c = chain_cfg(SamplerKind::Sghmc, 0.05, 0.5);
  run_chain_recorded(c, QuadraticTarget::isotropic(2, 1.0), 500, 0, 9, t1);
  run_chain_recorded(c, QuadraticTarget::isotropic(2, 1.0), 500, 0, 9, t2);
  EXPECT_EQ(t1.size(), 1000u);
  EXPECT_EQ(t1, t2);
}

TEST(Chain, BadBurnInRejected) {
  EXPECT_THROW(run_chain(chain_cfg(SamplerKind::Sgld, 0.01), QuadraticTarget::isotropic(1, 1.0), 100, 100, 1),
               ContractError);
  EXPECT_EQ(default_burn_in(200000), 10000);
}
