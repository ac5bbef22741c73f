// bbyol command line: pretrain, finetune, eval, ood, sample-diag, gen-data.
// Exit codes: 0 ok, 1 config, 2 data, 3 numeric/divergence, 4 I/O.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bbyol/config.hpp"
#include "bbyol/errors.hpp"
#include "bbyol/pipeline.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string seeds;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration file (defaults apply when omitted)");
  cmd->add_option("--out", c.out, "Output directory, overrides run.output_dir");
  cmd->add_option("--seed", c.seeds, "Comma-separated seeds, overrides run.seeds");
}

bbyol::RunConfig resolve(const Common& c) {
  bbyol::RunConfig cfg = c.config.empty() ? bbyol::RunConfig{} : bbyol::load_config(c.config);
  if (!c.out.empty()) cfg.run.output_dir = c.out;
  if (!c.seeds.empty()) cfg.run.seeds = bbyol::parse_seed_list(c.seeds);
  cfg.validate();
  return cfg;
}

void print_rows(const std::vector<bbyol::ResultRow>& rows, const bbyol::RunConfig& cfg) {
  std::cout << bbyol::format_results(rows, bbyol::config_digest(cfg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian BYOL on synthetic cluster data"};
  app.require_subcommand(1);

  Common common;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain and write one posterior ensemble per seed");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune every snapshot at every label fraction");
  auto* eval = app.add_subcommand("eval", "Accuracy and NLL tables, single snapshot and BMA prefixes");
  auto* ood = app.add_subcommand("ood", "Predictive entropy histograms and AUROC on the OOD set");
  auto* diag = app.add_subcommand("sample-diag", "Run the sampler on a Gaussian target and report moments");
  auto* gen = app.add_subcommand("gen-data", "Write the generated splits as dataset files");
  auto* show = app.add_subcommand("show-config", "Print the resolved configuration and its digest");
  for (auto* cmd : {pretrain, finetune, eval, ood, diag, gen, show}) add_common(cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const bbyol::RunConfig cfg = resolve(common);
    if (*pretrain) {
      for (const auto& p : bbyol::cmd_pretrain(cfg)) std::cout << p.string() << '\n';
    } else if (*finetune) {
      std::cout << bbyol::cmd_finetune(cfg).size() << " members written\n";
    } else if (*eval) {
      print_rows(bbyol::cmd_eval(cfg), cfg);
    } else if (*ood) {
      print_rows(bbyol::cmd_ood(cfg), cfg);
    } else if (*diag) {
      const bbyol::ChainStats stats = bbyol::cmd_sample_diag(cfg);
      std::cout << bbyol::format_chain_stats(
          stats, bbyol::QuadraticTarget::isotropic(cfg.diag.dim, cfg.sampler.temperature));
    } else if (*gen) {
      const bbyol::DataBundle data = bbyol::build_datasets(cfg);
      const std::filesystem::path dir = std::filesystem::path(cfg.run.output_dir) / "data";
      bbyol::save_dataset(data.pretrain, dir / "pretrain");
      bbyol::save_dataset(data.train, dir / "train");
      bbyol::save_dataset(data.test, dir / "test");
      bbyol::save_dataset(data.ood, dir / "ood");
      std::cout << dir.string() << '\n';
    } else if (*show) {
      std::cout << bbyol::format_config(cfg) << "\n# digest " << bbyol::config_digest(cfg) << '\n';
    }
  } catch (const bbyol::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const bbyol::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
