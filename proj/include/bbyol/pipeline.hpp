#pragma once

// End-to-end runs behind the CLI subcommands. Every command writes its
// artifacts under the configured output directory and also returns them.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bbyol/config.hpp"
#include "bbyol/data.hpp"
#include "bbyol/diagnostics.hpp"
#include "bbyol/downstream.hpp"
#include "bbyol/posterior.hpp"

namespace bbyol {

struct DataBundle {
  Dataset pretrain;  // unlabeled
  Dataset train;
  Dataset test;
  Dataset ood;  // unlabeled
};

/// Generates (or loads) the four splits. Generated splits come from one
/// cluster world, so train, test and pretrain rows share class means.
DataBundle build_datasets(const RunConfig& config);

struct LossLogRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  bool noise_active = false;
};

struct PretrainRun {
  PosteriorEnsemble ensemble;
  std::vector<LossLogRow> log;
};

/// Pretraining loop for one seed: minibatch, augment, gradient of U~,
/// sampler step, EMA update and a snapshot at the end of every cycle.
PretrainRun run_pretrain(const RunConfig& config, const Dataset& pretrain, std::uint64_t seed);

std::string format_loss_log(const std::vector<LossLogRow>& log);

/// One row of a long-format results table.
struct ResultRow {
  std::string method;
  std::string mode;  // single, bma or cross_seed
  double label_fraction = 0.0;
  std::size_t ensemble_size = 0;
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_seeds = 0;
};

std::string format_results(const std::vector<ResultRow>& rows, const std::string& digest);
/// Finds the row with the given key; throws ContractError when absent.
const ResultRow& find_result(const std::vector<ResultRow>& rows, const std::string& mode, double label_fraction,
                             std::size_t ensemble_size, const std::string& metric);

// Output layout under run.output_dir.
std::filesystem::path ensemble_path(const RunConfig& config, std::uint64_t seed);
std::filesystem::path member_path(const RunConfig& config, std::uint64_t seed, double label_fraction,
                                  std::size_t member);

/// Writes pretrain/seed_<s>/{ensemble.ckpt, loss_log.tsv}; returns the ensemble paths.
std::vector<std::filesystem::path> cmd_pretrain(const RunConfig& config);
/// Writes finetune/seed_<s>/frac_<f>/member_<i>.ckpt and train_log_<i>.tsv.
std::vector<std::filesystem::path> cmd_finetune(const RunConfig& config);
/// Writes eval/results.tsv: accuracy and NLL for single-snapshot and BMA prefix modes.
std::vector<ResultRow> cmd_eval(const RunConfig& config);
/// Writes ood/results.tsv and ood/hist_*.tsv at eval.ood_label_fraction.
std::vector<ResultRow> cmd_ood(const RunConfig& config);
/// Writes diag/chain.tsv for the configured sampler on an isotropic quadratic.
ChainStats cmd_sample_diag(const RunConfig& config);

/// Fine-tuned members of one seed and label fraction in chronological order.
std::vector<FineTunedModel> load_members(const RunConfig& config, std::uint64_t seed, double label_fraction);

}  // namespace bbyol
