#include "bbyol/sampler.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "bbyol/errors.hpp"

namespace bbyol {

SamplerKind parse_sampler_kind(std::string_view name) {
  if (name == "map_sgd") return SamplerKind::MapSgd;
  if (name == "snap_sgd") return SamplerKind::SnapSgd;
  if (name == "sgld") return SamplerKind::Sgld;
  if (name == "sghmc") return SamplerKind::Sghmc;
  if (name == "csghmc") return SamplerKind::Csghmc;
  throw ConfigError("unknown sampler kind '" + std::string(name) + "'");
}

const char* sampler_kind_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::MapSgd: return "map_sgd";
    case SamplerKind::SnapSgd: return "snap_sgd";
    case SamplerKind::Sgld: return "sgld";
    case SamplerKind::Sghmc: return "sghmc";
    case SamplerKind::Csghmc: return "csghmc";
  }
  return "?";
}

void SamplerConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("sampler lr0 must be positive");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("sampler beta must lie in [0, 1)");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (cycle_len < 1) throw ConfigError("cycle_len must be at least 1");
  if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
  if (n_dataset < 1) throw ConfigError("n_dataset must be at least 1");
  if (!(noise_start_frac >= 0.0 && noise_start_frac <= 1.0)) throw ConfigError("noise_start_frac must lie in [0, 1]");
  if (!(prior_std > 0.0)) throw ConfigError("prior_std must be positive");
}

// ---------------------------------------------------------------------------
// Noise

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in (0, 1] from the top 53 bits.
double unit_open_left(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53; }

}  // namespace

NoiseSource NoiseSource::fixed(std::vector<double> values) {
  if (values.empty()) throw ContractError("fixed noise needs at least one value");
  NoiseSource src;
  src.fixed_ = std::move(values);
  return src;
}

double NoiseSource::next() {
  const std::uint64_t i = counter_++;
  if (!fixed_.empty()) return fixed_[i % fixed_.size()];
  const std::uint64_t key = splitmix64(seed_ ^ 0x5851f42d4c957f2dULL);
  const double u1 = unit_open_left(splitmix64(key + 2 * i));
  const double u2 = unit_open_left(splitmix64(key + 2 * i + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void NoiseSource::fill(std::span<double> out) {
  for (double& v : out) v = next();
}

// ---------------------------------------------------------------------------
// Schedule

double cyclic_lr(const SamplerConfig& cfg, std::int64_t k) {
  if (k < 0 || k >= cfg.total_steps) {
    throw ContractError("step " + std::to_string(k) + " outside [0, " + std::to_string(cfg.total_steps) + ")");
  }
  if (cfg.kind == SamplerKind::MapSgd) return cfg.lr0;
  const double pos = static_cast<double>(k % cfg.cycle_len) / static_cast<double>(cfg.cycle_len);
  return cfg.lr0 / 2.0 * (std::cos(std::numbers::pi * pos) + 1.0);
}

bool noise_active(const SamplerConfig& cfg, std::int64_t k) {
  if (cfg.kind == SamplerKind::MapSgd || cfg.kind == SamplerKind::SnapSgd) return false;
  const double pos = static_cast<double>(k % cfg.cycle_len);
  return pos >= cfg.noise_start_frac * static_cast<double>(cfg.cycle_len);
}

bool should_yield(const SamplerConfig& cfg, std::int64_t k) { return (k + 1) % cfg.cycle_len == 0; }

// ---------------------------------------------------------------------------
// Gradient estimator

PosteriorGradient posterior_grad(TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b,
                                 const SamplerConfig& cfg) {
  if (view_a.rows() == 0 || view_a.size() == 0) throw ContractError("posterior_grad on an empty batch");
  if (!(cfg.prior_std > 0.0)) throw ContractError("prior_std must be positive");
  PosteriorGradient out;
  out.loss = byol_loss_and_grad(model, view_a, view_b);
  out.grad = model.online_grad();
  // Gaussian prior on the encoder only: -grad log p = theta / prior_std^2, scaled by 1/n.
  const double prior_scale = 1.0 / (static_cast<double>(cfg.n_dataset) * cfg.prior_std * cfg.prior_std);
  const auto enc = model.online_encoder.values();
  for (std::size_t i = 0; i < enc.size(); ++i) out.grad[i] += prior_scale * enc[i];
  return out;
}

// ---------------------------------------------------------------------------
// Update rules

namespace {

void check_dims(std::span<double> params, std::span<const double> grad_u) {
  if (params.size() != grad_u.size()) throw DimensionError("gradient and parameter dimensions differ");
}

double drift_factor(double lr, const SamplerConfig& cfg) {
  const double f = lr / 2.0 * static_cast<double>(cfg.n_dataset);
  return cfg.temper_drift ? f / cfg.temperature : f;
}

double noise_scale(double lr, double beta, const SamplerConfig& cfg) {
  const double t = cfg.temper_drift ? 1.0 : cfg.temperature;
  return std::sqrt(t * (1.0 - beta) * lr);
}

}  // namespace

void sgld_step(std::span<double> params, SamplerState& state, std::span<const double> grad_u, double lr,
               const SamplerConfig& cfg, bool inject_noise) {
  check_dims(params, grad_u);
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  const double drift = drift_factor(lr, cfg);
  const double sigma = noise_scale(lr, 0.0, cfg);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double delta = -drift * grad_u[i];
    if (inject_noise) delta += sigma * state.noise.next();
    params[i] += delta;
  }
  ++state.step;
}

void sghmc_step(std::span<double> params, SamplerState& state, std::span<const double> grad_u, double lr,
                const SamplerConfig& cfg, bool inject_noise) {
  check_dims(params, grad_u);
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  if (state.momentum.size() != params.size()) throw DimensionError("momentum buffer does not match parameters");
  const double drift = drift_factor(lr, cfg);
  const double sigma = noise_scale(lr, cfg.beta, cfg);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double m = cfg.beta * state.momentum[i] + -drift * grad_u[i];
    if (inject_noise) m += sigma * state.noise.next();
    state.momentum[i] = m;
    params[i] += m;
  }
  ++state.step;
}

Sampler::Sampler(SamplerConfig cfg, std::size_t dim, std::uint64_t seed) : cfg_(cfg), state_(dim, seed) {
  cfg_.validate();
}

StepInfo Sampler::step(std::span<double> params, std::span<const double> grad_u) {
  const std::int64_t k = state_.step;
  StepInfo info{cyclic_lr(cfg_, k), noise_active(cfg_, k)};
  if (cfg_.kind == SamplerKind::Sgld) {
    sgld_step(params, state_, grad_u, info.lr, cfg_, info.noise);
  } else {
    sghmc_step(params, state_, grad_u, info.lr, cfg_, info.noise);
  }
  return info;
}

}  // namespace bbyol
