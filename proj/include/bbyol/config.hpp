#pragma once

// Run configuration: a sectioned key = value text file. Every key has a
// default; unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bbyol/byol.hpp"
#include "bbyol/data.hpp"
#include "bbyol/downstream.hpp"
#include "bbyol/metrics.hpp"
#include "bbyol/sampler.hpp"

namespace bbyol {

enum class DataSource { Generator, Files };

struct DataSection {
  DataSource source = DataSource::Generator;
  int classes = 4;
  std::size_t input_dim = 8;
  double separation = 3.0;
  double cluster_std = 1.0;
  double warp = 1.0;
  std::uint64_t data_seed = 1234;
  std::size_t pretrain_per_class = 500;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 250;
  OodMode ood_mode = OodMode::ShiftedMeans;
  std::size_t ood_count = 1000;
  std::string pretrain_path;
  std::string train_path;
  std::string test_path;
  std::string ood_path;
  AugmentationConfig augment;

  bool operator==(const DataSection&) const = default;
};

struct ModelSection {
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::size_t embed_dim = 16;
  std::size_t projector_hidden = 32;
  std::size_t proj_dim = 8;
  std::size_t predictor_hidden = 32;
  Activation activation = Activation::Tanh;
  double tau = 0.99;

  bool operator==(const ModelSection&) const = default;
};

struct SamplerSection {
  SamplerKind kind = SamplerKind::Csghmc;
  double lr0 = 0.2;
  double beta = 0.9;
  double temperature = 0.1;
  std::int64_t cycle_len = 50;
  std::int64_t total_steps = 200;
  std::size_t batch = 256;
  double noise_start_frac = 0.8;
  double prior_std = 1.0;
  bool temper_drift = false;
  /// 0 means the pretraining set size.
  std::int64_t n_dataset = 0;
  /// Keep only the most recent snapshots; 0 keeps all.
  std::size_t ensemble_size = 0;

  bool operator==(const SamplerSection&) const = default;
};

struct FinetuneSection {
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t batch = 80;
  std::size_t epochs = 50;
  std::vector<double> label_fractions{1.0, 0.5, 0.25, 0.1};
  bool freeze_encoder = false;
  double weight_decay = 0.0;

  bool operator==(const FinetuneSection&) const = default;
};

struct EvalSection {
  std::size_t bins = 20;
  OodScore ood_score = OodScore::Entropy;
  double ood_label_fraction = 1.0;
  /// Also report an ensemble built from the last snapshot of every seed.
  bool cross_seed_ensemble = false;

  bool operator==(const EvalSection&) const = default;
};

struct DiagSection {
  std::size_t dim = 1;
  std::int64_t steps = 200000;
  /// Negative selects the default of 5% of steps.
  std::int64_t burn_in = -1;
  double lr = 0.01;

  bool operator==(const DiagSection&) const = default;
};

struct RunSection {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "out";
  /// Display name for result tables; empty derives it from the sampler kind.
  std::string method;

  bool operator==(const RunSection&) const = default;
};

struct RunConfig {
  DataSection data;
  ModelSection model;
  SamplerSection sampler;
  FinetuneSection finetune;
  EvalSection eval;
  DiagSection diag;
  RunSection run;

  bool operator==(const RunConfig&) const = default;

  void validate() const;
  TwinArch arch() const;
  /// Sampler settings for a pretraining set of n rows.
  SamplerConfig sampler_config(std::size_t n) const;
  FineTuneConfig finetune_config(double label_fraction) const;
  std::string method_name() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);
/// Digest of the canonical text form, ignoring run.output_dir.
std::string config_digest(const RunConfig& config);

/// Parses "1,2,3" into seeds.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace bbyol
