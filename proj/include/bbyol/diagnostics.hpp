#pragma once

// Closed-form Gaussian targets for checking that the samplers draw from
// exp(-U(theta)/T), plus per-chain moment statistics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bbyol/sampler.hpp"

namespace bbyol {

/// U(theta) = 0.5 theta^T Lambda theta, sampled at temperature T.
struct QuadraticTarget {
  Eigen::MatrixXd precision;
  double temperature = 1.0;

  static QuadraticTarget isotropic(std::size_t dim, double temperature);
  std::size_t dim() const { return static_cast<std::size_t>(precision.rows()); }
  /// Throws unless the precision is symmetric positive definite.
  void validate() const;
  /// Stationary covariance T * Lambda^{-1}.
  Eigen::MatrixXd covariance() const;
};

/// Exact gradient Lambda theta.
std::vector<double> quadratic_grad(const QuadraticTarget& target, std::span<const double> theta);

struct ChainStats {
  std::size_t sample_count = 0;
  std::vector<double> mean;
  std::vector<double> variance;
  /// Lag-1 autocorrelation per coordinate.
  std::vector<double> lag1;
};

/// Runs cfg.kind at the constant step size cfg.lr0 with noise on every step,
/// n = 1 and no prior split, at the target's temperature. Statistics cover the
/// steps after burn_in. Throws DivergenceError when any |theta| exceeds 1e6.
ChainStats run_chain(const SamplerConfig& cfg, const QuadraticTarget& target, std::int64_t steps,
                     std::int64_t burn_in, std::uint64_t seed);

/// Same as run_chain but also returns the full trajectory (steps x dim, row-major).
ChainStats run_chain_recorded(const SamplerConfig& cfg, const QuadraticTarget& target, std::int64_t steps,
                              std::int64_t burn_in, std::uint64_t seed, std::vector<double>& trajectory);

inline constexpr double kDivergenceBound = 1e6;

/// Default burn-in: 5% of the chain.
inline std::int64_t default_burn_in(std::int64_t steps) { return steps / 20; }

/// Tab-separated (coordinate, mean, variance, analytic_variance, lag1) table.
std::string format_chain_stats(const ChainStats& stats, const QuadraticTarget& target);

}  // namespace bbyol
