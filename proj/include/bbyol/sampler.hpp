#pragma once

// Optimizer/sampler family driving pretraining: momentum SGD (constant or
// cyclic step size), SGLD, SGHMC and cyclical SGHMC with a cold-posterior
// temperature on the injected noise.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "bbyol/autodiff.hpp"
#include "bbyol/byol.hpp"

namespace bbyol {

enum class SamplerKind { MapSgd, SnapSgd, Sgld, Sghmc, Csghmc };

SamplerKind parse_sampler_kind(std::string_view name);
const char* sampler_kind_name(SamplerKind kind);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Csghmc;
  double lr0 = 0.2;
  double beta = 0.9;
  double temperature = 0.1;
  std::int64_t cycle_len = 50;
  std::int64_t total_steps = 200;
  std::int64_t n_dataset = 1;
  /// Fraction of each cycle after which Gaussian noise is injected.
  double noise_start_frac = 0.8;
  /// Standard deviation of the isotropic Gaussian prior on encoder weights.
  double prior_std = 1.0;
  /// When set, the drift is divided by T and the noise carries no T.
  bool temper_drift = false;

  void validate() const;
};

/// Counter-based standard normal stream: draw i depends only on (seed, i).
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed = 0) : seed_(seed) {}
  /// Test hook: replays `values` cyclically instead of drawing.
  static NoiseSource fixed(std::vector<double> values);

  double next();
  void fill(std::span<double> out);
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::vector<double> fixed_;
};

struct SamplerState {
  std::vector<double> momentum;
  std::int64_t step = 0;
  NoiseSource noise;

  SamplerState() = default;
  SamplerState(std::size_t dim, std::uint64_t seed) : momentum(dim, 0.0), noise(seed) {}
};

/// (lr0/2)(cos(pi (k mod L)/L) + 1); constant lr0 for map_sgd.
double cyclic_lr(const SamplerConfig& cfg, std::int64_t k);
/// Whether step k injects noise under the kind and the within-cycle gate.
bool noise_active(const SamplerConfig& cfg, std::int64_t k);
/// True at the last step of every cycle.
bool should_yield(const SamplerConfig& cfg, std::int64_t k);

struct PosteriorGradient {
  double loss = 0.0;
  /// Gradient of the minibatch estimator, online layout encoder | projector | predictor.
  std::vector<double> grad;
};

/// Mean-batch symmetrized BYOL gradient plus theta/(n prior_std^2) on the
/// encoder block. The caller multiplies by n.
PosteriorGradient posterior_grad(TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b,
                                 const SamplerConfig& cfg);

/// theta += -(lr/2) n grad_U + sqrt(T lr) eps
void sgld_step(std::span<double> params, SamplerState& state, std::span<const double> grad_u, double lr,
               const SamplerConfig& cfg, bool inject_noise = true);
/// m <- beta m - (lr/2) n grad_U + sqrt(T (1-beta) lr) eps;  theta += m
void sghmc_step(std::span<double> params, SamplerState& state, std::span<const double> grad_u, double lr,
                const SamplerConfig& cfg, bool inject_noise = true);

struct StepInfo {
  double lr = 0.0;
  bool noise = false;
};

/// Applies the schedule, noise gate and update rule of cfg.kind for one step.
class Sampler {
 public:
  Sampler(SamplerConfig cfg, std::size_t dim, std::uint64_t seed);

  StepInfo step(std::span<double> params, std::span<const double> grad_u);
  const SamplerConfig& config() const noexcept { return cfg_; }
  const SamplerState& state() const noexcept { return state_; }

 private:
  SamplerConfig cfg_;
  SamplerState state_;
};

}  // namespace bbyol
