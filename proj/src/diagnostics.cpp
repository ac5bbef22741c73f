#include "bbyol/diagnostics.hpp"

#include <cmath>
#include <sstream>

#include "bbyol/errors.hpp"

namespace bbyol {

QuadraticTarget QuadraticTarget::isotropic(std::size_t dim, double temperature) {
  QuadraticTarget t;
  t.precision = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  t.temperature = temperature;
  return t;
}

void QuadraticTarget::validate() const {
  if (precision.rows() == 0 || precision.rows() != precision.cols()) throw ConfigError("precision must be square");
  if (!precision.isApprox(precision.transpose(), 1e-12)) throw ConfigError("precision must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw ConfigError("precision must be positive definite");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

Eigen::MatrixXd QuadraticTarget::covariance() const {
  validate();
  return temperature * precision.inverse();
}

std::vector<double> quadratic_grad(const QuadraticTarget& target, std::span<const double> theta) {
  if (theta.size() != target.dim()) throw DimensionError("theta dimension does not match target");
  const Eigen::Map<const Eigen::VectorXd> t(theta.data(), static_cast<Eigen::Index>(theta.size()));
  const Eigen::VectorXd g = target.precision * t;
  return std::vector<double>(g.data(), g.data() + g.size());
}

namespace {

ChainStats run(const SamplerConfig& base, const QuadraticTarget& target, std::int64_t steps, std::int64_t burn_in,
               std::uint64_t seed, std::vector<double>* trajectory) {
  target.validate();
  if (steps <= burn_in || burn_in < 0) throw ContractError("chain needs steps > burn_in >= 0");
  SamplerConfig cfg = base;
  cfg.n_dataset = 1;
  cfg.temperature = target.temperature;
  cfg.validate();

  const std::size_t d = target.dim();
  std::vector<double> theta(d, 0.0);
  SamplerState state(d, seed);
  if (trajectory) trajectory->clear();

  std::vector<double> sum(d, 0.0), sum_sq(d, 0.0), sum_lag(d, 0.0), first(d, 0.0), prev(d, 0.0);
  std::size_t count = 0;
  for (std::int64_t k = 0; k < steps; ++k) {
    const auto grad = quadratic_grad(target, theta);
    switch (cfg.kind) {
      case SamplerKind::Sgld:
        sgld_step(theta, state, grad, cfg.lr0, cfg, true);
        break;
      default:
        sghmc_step(theta, state, grad, cfg.lr0, cfg, true);
        break;
    }
    for (double v : theta)
      if (!std::isfinite(v) || std::abs(v) > kDivergenceBound) throw DivergenceError(k, "|theta| exceeded 1e6");
    if (trajectory) trajectory->insert(trajectory->end(), theta.begin(), theta.end());
    if (k < burn_in) continue;
    for (std::size_t i = 0; i < d; ++i) {
      if (count == 0) first[i] = theta[i];
      else sum_lag[i] += prev[i] * theta[i];
      sum[i] += theta[i];
      sum_sq[i] += theta[i] * theta[i];
      prev[i] = theta[i];
    }
    ++count;
  }

  ChainStats stats;
  stats.sample_count = count;
  const double n = static_cast<double>(count);
  for (std::size_t i = 0; i < d; ++i) {
    const double mean = sum[i] / n;
    const double var = count > 1 ? (sum_sq[i] - n * mean * mean) / (n - 1.0) : 0.0;
    // Lag-1 autocovariance over consecutive pairs, normalized by the variance.
    const double pairs = n - 1.0;
    double lag = 0.0;
    if (count > 2 && var > 0.0) {
      const double cross = sum_lag[i] - mean * (sum[i] - first[i]) - mean * (sum[i] - prev[i]) + pairs * mean * mean;
      lag = cross / pairs / var;
    }
    stats.mean.push_back(mean);
    stats.variance.push_back(var);
    stats.lag1.push_back(lag);
  }
  return stats;
}

}  // namespace

ChainStats run_chain(const SamplerConfig& cfg, const QuadraticTarget& target, std::int64_t steps,
                     std::int64_t burn_in, std::uint64_t seed) {
  return run(cfg, target, steps, burn_in, seed, nullptr);
}

ChainStats run_chain_recorded(const SamplerConfig& cfg, const QuadraticTarget& target, std::int64_t steps,
                              std::int64_t burn_in, std::uint64_t seed, std::vector<double>& trajectory) {
  return run(cfg, target, steps, burn_in, seed, &trajectory);
}

std::string format_chain_stats(const ChainStats& stats, const QuadraticTarget& target) {
  const Eigen::MatrixXd cov = target.covariance();
  std::ostringstream os;
  os.precision(10);
  os << "coordinate\tmean\tvariance\tanalytic_variance\tlag1\tsamples\n";
  for (std::size_t i = 0; i < stats.mean.size(); ++i) {
    os << i << '\t' << stats.mean[i] << '\t' << stats.variance[i] << '\t'
       << cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) << '\t' << stats.lag1[i] << '\t'
       << stats.sample_count << '\n';
  }
  return os.str();
}

}  // namespace bbyol
