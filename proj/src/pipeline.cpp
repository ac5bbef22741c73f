#include "bbyol/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <tuple>

#include "binary_io.hpp"
#include "bbyol/errors.hpp"
#include "bbyol/metrics.hpp"

namespace bbyol {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string frac_label(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

fs::path out_root(const RunConfig& c) { return fs::path(c.run.output_dir); }

Dataset load_split(const std::string& path, SplitTag split) {
  Dataset d = load_dataset(path);
  d.split = split;
  return d;
}

}  // namespace

DataBundle build_datasets(const RunConfig& config) {
  const DataSection& d = config.data;
  DataBundle b;
  if (d.source == DataSource::Files) {
    b.pretrain = load_split(d.pretrain_path, SplitTag::Pretrain);
    b.train = load_split(d.train_path, SplitTag::Train);
    b.test = load_split(d.test_path, SplitTag::Test);
    if (!d.ood_path.empty()) b.ood = load_split(d.ood_path, SplitTag::Ood);
    else b.ood = make_ood(b.test, d.ood_mode, d.data_seed + 1, d.ood_count);
    b.pretrain.y.reset();
    if (!b.train.y || !b.test.y) throw DataError("train and test splits need labels");
    for (const Dataset* s : {&b.pretrain, &b.train, &b.test, &b.ood})
      if (s->cols() != b.pretrain.cols()) throw DimensionError("splits disagree on input width");
    return b;
  }

  ClusterSpec spec;
  spec.classes = d.classes;
  spec.per_class = d.pretrain_per_class + d.train_per_class + d.test_per_class;
  spec.input_dim = d.input_dim;
  spec.separation = d.separation;
  spec.cluster_std = d.cluster_std;
  spec.warp = d.warp;
  spec.seed = d.data_seed;
  const Dataset all = make_clusters(spec);

  // Row i belongs to class i mod C and is that class's (i / C)-th draw.
  const std::size_t classes = static_cast<std::size_t>(d.classes);
  std::vector<std::size_t> pre, train, test;
  for (std::size_t i = 0; i < all.rows(); ++i) {
    const std::size_t j = i / classes;
    if (j < d.pretrain_per_class) pre.push_back(i);
    else if (j < d.pretrain_per_class + d.train_per_class) train.push_back(i);
    else test.push_back(i);
  }
  b.pretrain = take_rows(all, pre, SplitTag::Pretrain);
  b.pretrain.y.reset();
  b.train = take_rows(all, train, SplitTag::Train);
  b.test = take_rows(all, test, SplitTag::Test);
  b.ood = make_ood(b.test, d.ood_mode, d.data_seed + 1, d.ood_count);
  return b;
}

PretrainRun run_pretrain(const RunConfig& config, const Dataset& pretrain, std::uint64_t seed) {
  config.validate();
  const SamplerConfig scfg = config.sampler_config(pretrain.rows());
  TwinModel model = init_twin(config.arch(), seed, config.model.tau);
  Sampler sampler(scfg, model.online_dim(), mix(seed, 1));
  std::mt19937_64 aug_rng(mix(seed, 2));

  RunMeta meta;
  meta.seed = seed;
  meta.config_digest = config_digest(config);
  meta.extra["method"] = config.method_name();
  const std::size_t batch = std::min(config.sampler.batch, pretrain.rows());
  meta.extra["steps_per_epoch"] = std::to_string((pretrain.rows() + batch - 1) / batch);

  PretrainRun run{PosteriorEnsemble(std::move(meta)), {}};
  run.log.reserve(static_cast<std::size_t>(scfg.total_steps));

  std::uint64_t epoch = 0;
  auto batches = minibatches(pretrain.rows(), batch, mix(seed, 3), epoch);
  std::size_t next = 0;
  for (std::int64_t k = 0; k < scfg.total_steps; ++k) {
    if (next == batches.size()) {
      batches = minibatches(pretrain.rows(), batch, mix(seed, 3), ++epoch);
      next = 0;
    }
    const ad::Tensor xb = gather_rows(pretrain.x, batches[next++]);
    const auto [va, vb] = augment_pair(xb, config.data.augment, aug_rng);

    PosteriorGradient pg;
    try {
      pg = posterior_grad(model, va, vb, scfg);
    } catch (const NumericError& e) {
      throw DivergenceError(k, std::string("non-finite value in the forward pass: ") + e.what());
    }
    std::vector<double> theta = model.online_values();
    const StepInfo info = sampler.step(theta, pg.grad);
    for (double v : theta)
      if (!std::isfinite(v)) throw DivergenceError(k, "non-finite parameter after the sampler step");
    model.set_online_values(theta);
    ema_update(model);

    run.log.push_back(LossLogRow{k, info.lr, pg.loss, info.noise});
    if (should_yield(scfg, k)) run.ensemble.collect(model, k, k / scfg.cycle_len, pg.loss, scfg.kind);
  }
  run.ensemble.keep_last(config.sampler.ensemble_size);
  return run;
}

std::string format_loss_log(const std::vector<LossLogRow>& log) {
  std::string out = "step\tlr\tloss\tnoise_active\n";
  for (const LossLogRow& r : log)
    out += std::to_string(r.step) + '\t' + num(r.lr) + '\t' + num(r.loss) + '\t' + (r.noise_active ? "1" : "0") + '\n';
  return out;
}

std::string format_results(const std::vector<ResultRow>& rows, const std::string& digest) {
  std::string out = "method\tmode\tlabel_fraction\tensemble_size\tmetric\tvalue\tstderr\tn_seeds\tconfig_digest\n";
  for (const ResultRow& r : rows) {
    out += r.method + '\t' + r.mode + '\t' + frac_label(r.label_fraction) + '\t' + std::to_string(r.ensemble_size) +
           '\t' + r.metric + '\t' + num(r.value) + '\t' + num(r.std_error) + '\t' + std::to_string(r.n_seeds) + '\t' +
           digest + '\n';
  }
  return out;
}

const ResultRow& find_result(const std::vector<ResultRow>& rows, const std::string& mode, double label_fraction,
                             std::size_t ensemble_size, const std::string& metric) {
  for (const ResultRow& r : rows)
    if (r.mode == mode && r.label_fraction == label_fraction && r.ensemble_size == ensemble_size && r.metric == metric)
      return r;
  throw ContractError("no result row for " + mode + "/" + frac_label(label_fraction) + "/" +
                      std::to_string(ensemble_size) + "/" + metric);
}

fs::path ensemble_path(const RunConfig& config, std::uint64_t seed) {
  return out_root(config) / "pretrain" / ("seed_" + std::to_string(seed)) / "ensemble.ckpt";
}

fs::path member_path(const RunConfig& config, std::uint64_t seed, double label_fraction, std::size_t member) {
  return out_root(config) / "finetune" / ("seed_" + std::to_string(seed)) / ("frac_" + frac_label(label_fraction)) /
         ("member_" + std::to_string(member) + ".ckpt");
}

std::vector<fs::path> cmd_pretrain(const RunConfig& config) {
  config.validate();
  const DataBundle data = build_datasets(config);
  std::vector<fs::path> written;
  for (std::uint64_t seed : config.run.seeds) {
    const PretrainRun run = run_pretrain(config, data.pretrain, seed);
    const fs::path path = ensemble_path(config, seed);
    save_ensemble(run.ensemble, path);
    detail::write_text_file(path.parent_path() / "loss_log.tsv", format_loss_log(run.log));
    written.push_back(path);
  }
  return written;
}

std::vector<fs::path> cmd_finetune(const RunConfig& config) {
  config.validate();
  const DataBundle data = build_datasets(config);
  const std::string digest = config_digest(config);
  std::vector<double> fractions = config.finetune.label_fractions;
  if (std::find(fractions.begin(), fractions.end(), config.eval.ood_label_fraction) == fractions.end())
    fractions.push_back(config.eval.ood_label_fraction);

  std::vector<fs::path> written;
  for (std::uint64_t seed : config.run.seeds) {
    const PosteriorEnsemble ensemble = load_ensemble(ensemble_path(config, seed));
    if (ensemble.empty()) throw DataError("ensemble for seed " + std::to_string(seed) + " holds no snapshots");
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
      const double frac = fractions[fi];
      // Every member sees the same labeled subset; head init and batch order differ per member.
      const std::uint64_t frac_seed = mix(seed, 1000 + static_cast<std::uint64_t>(std::llround(frac * 1e6)));
      const Dataset labeled = subset_labels(data.train, frac, frac_seed);
      const FineTuneConfig fcfg = config.finetune_config(1.0);
      for (std::size_t i = 0; i < ensemble.size(); ++i) {
        FineTuneLog log;
        const FineTunedModel m = finetune(ensemble[i], labeled, fcfg, mix(frac_seed, i), config.data.classes, &log);

        Archive archive;
        archive.meta_text = format_meta({{"kind", "finetuned_member"},
                                         {"seed", std::to_string(seed)},
                                         {"label_fraction", frac_label(frac)},
                                         {"member", std::to_string(i)},
                                         {"activation", activation_name(m.activation)},
                                         {"classes", std::to_string(m.head.class_count)},
                                         {"labeled_count", std::to_string(log.labeled_count)},
                                         {"snapshot_step", std::to_string(ensemble[i].step)},
                                         {"config_digest", digest}});
        archive.records.push_back(ArchiveRecord{"encoder", ensemble[i].step, ensemble[i].cycle, 0.0, m.encoder});
        archive.records.push_back(ArchiveRecord{"head", ensemble[i].step, ensemble[i].cycle, 0.0, m.head.params});
        const fs::path path = member_path(config, seed, frac, i);
        write_archive(archive, path);

        std::string text = "epoch\tloss\n";
        for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) text += std::to_string(e) + '\t' + num(log.epoch_loss[e]) + '\n';
        detail::write_text_file(path.parent_path() / ("train_log_" + std::to_string(i) + ".tsv"), text);
        written.push_back(path);
      }
    }
  }
  return written;
}

std::vector<FineTunedModel> load_members(const RunConfig& config, std::uint64_t seed, double label_fraction) {
  std::vector<FineTunedModel> members;
  for (std::size_t i = 0;; ++i) {
    const fs::path path = member_path(config, seed, label_fraction, i);
    if (!fs::exists(path)) break;
    Archive archive = read_archive(path);
    auto meta = parse_meta(archive.meta_text);
    if (meta["kind"] != "finetuned_member" || archive.records.size() != 2 || archive.records[0].tag != "encoder" ||
        archive.records[1].tag != "head")
      throw CheckpointError(CheckpointFault::Malformed, path.string() + " is not a fine-tuned member");
    FineTunedModel m;
    m.encoder = std::move(archive.records[0].params);
    m.activation = parse_activation(meta["activation"]);
    m.head.params = std::move(archive.records[1].params);
    m.head.class_count = std::stoi(meta["classes"]);
    m.head.embed_dim = m.head.params.segments().at(0).shape.at(0);
    m.head.validate();
    members.push_back(std::move(m));
  }
  if (members.empty())
    throw IoError("no fine-tuned members for seed " + std::to_string(seed) + " at label fraction " +
                  frac_label(label_fraction) + " under " + config.run.output_dir);
  return members;
}

namespace {

// Members newest first, so a BMA prefix of k covers the k most recent snapshots
// and a prefix of 1 is the single-snapshot model.
std::vector<FineTunedModel> newest_first(std::vector<FineTunedModel> members) {
  std::reverse(members.begin(), members.end());
  return members;
}

struct Collector {
  std::string method;
  std::vector<ResultRow> rows;
  std::map<std::tuple<std::string, double, std::size_t, std::string>, std::vector<double>> values;
  std::vector<std::tuple<std::string, double, std::size_t, std::string>> order;

  void add(const std::string& mode, double frac, std::size_t size, const std::string& metric, double v) {
    const auto key = std::make_tuple(mode, frac, size, metric);
    auto [it, inserted] = values.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(v);
  }

  std::vector<ResultRow> finish() const {
    std::vector<ResultRow> out;
    for (const auto& key : order) {
      const auto& vals = values.at(key);
      const SeedSummary s = aggregate_seeds(vals);
      out.push_back(ResultRow{method, std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), s.mean,
                              s.std_error, s.count});
    }
    return out;
  }
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::vector<ResultRow> cmd_eval(const RunConfig& config) {
  config.validate();
  const DataBundle data = build_datasets(config);
  const std::vector<int>& labels = *data.test.y;
  Collector col{config.method_name(), {}, {}, {}};

  for (double frac : config.finetune.label_fractions) {
    std::vector<FineTunedModel> last_members;
    for (std::uint64_t seed : config.run.seeds) {
      const auto members = newest_first(load_members(config, seed, frac));
      const ad::Tensor single = predict_proba(members.front(), data.test.x);
      col.add("single", frac, 1, "accuracy", accuracy(single, labels));
      col.add("single", frac, 1, "nll", nll(single, labels));
      for (std::size_t k = 1; k <= members.size(); ++k) {
        const ad::Tensor p = bma_predict(members, data.test.x, k);
        col.add("bma", frac, k, "accuracy", accuracy(p, labels));
        col.add("bma", frac, k, "nll", nll(p, labels));
      }
      last_members.push_back(members.front());
    }
    if (config.eval.cross_seed_ensemble) {
      const ad::Tensor p = bma_predict(last_members, data.test.x);
      col.add("cross_seed", frac, last_members.size(), "accuracy", accuracy(p, labels));
      col.add("cross_seed", frac, last_members.size(), "nll", nll(p, labels));
    }
  }

  const auto rows = col.finish();
  detail::write_text_file(out_root(config) / "eval" / "results.tsv", format_results(rows, config_digest(config)));
  return rows;
}

std::vector<ResultRow> cmd_ood(const RunConfig& config) {
  config.validate();
  const DataBundle data = build_datasets(config);
  const std::vector<int>& labels = *data.test.y;
  const double frac = config.eval.ood_label_fraction;
  const double max_entropy = std::log(static_cast<double>(config.data.classes));
  Collector col{config.method_name(), {}, {}, {}};
  const fs::path dir = out_root(config) / "ood";

  auto score = [&](const std::string& mode, std::size_t size, std::uint64_t seed, const ad::Tensor& p_in,
                   const ad::Tensor& p_ood) {
    const auto h_in = predictive_entropy_rows(p_in);
    const auto h_ood = predictive_entropy_rows(p_ood);
    const auto s_in = ood_scores(p_in, config.eval.ood_score);
    const auto s_ood = ood_scores(p_ood, config.eval.ood_score);
    col.add(mode, frac, size, "nll", nll(p_in, labels));
    col.add(mode, frac, size, "accuracy", accuracy(p_in, labels));
    col.add(mode, frac, size, "auroc", auroc(s_ood, s_in));
    col.add(mode, frac, size, "entropy_in", mean_of(h_in));
    col.add(mode, frac, size, "entropy_ood", mean_of(h_ood));
    const std::string stem = "hist_" + mode + "_" + std::to_string(size) + "_seed_" + std::to_string(seed);
    detail::write_text_file(dir / (stem + "_in.tsv"),
                            format_histogram(entropy_histogram(h_in, config.eval.bins, 0.0, max_entropy)));
    detail::write_text_file(dir / (stem + "_ood.tsv"),
                            format_histogram(entropy_histogram(h_ood, config.eval.bins, 0.0, max_entropy)));
  };

  for (std::uint64_t seed : config.run.seeds) {
    const auto members = newest_first(load_members(config, seed, frac));
    score("single", 1, seed, predict_proba(members.front(), data.test.x), predict_proba(members.front(), data.ood.x));
    for (std::size_t k = 1; k <= members.size(); ++k)
      score("bma", k, seed, bma_predict(members, data.test.x, k), bma_predict(members, data.ood.x, k));
  }

  const auto rows = col.finish();
  detail::write_text_file(dir / "results.tsv", format_results(rows, config_digest(config)));
  return rows;
}

ChainStats cmd_sample_diag(const RunConfig& config) {
  config.validate();
  SamplerConfig scfg = config.sampler_config(1);
  scfg.lr0 = config.diag.lr;
  const QuadraticTarget target = QuadraticTarget::isotropic(config.diag.dim, config.sampler.temperature);
  const std::int64_t burn = config.diag.burn_in < 0 ? default_burn_in(config.diag.steps) : config.diag.burn_in;
  ChainStats first;
  for (std::size_t i = 0; i < config.run.seeds.size(); ++i) {
    const std::uint64_t seed = config.run.seeds[i];
    const ChainStats stats = run_chain(scfg, target, config.diag.steps, burn, seed);
    detail::write_text_file(out_root(config) / "diag" / ("chain_seed_" + std::to_string(seed) + ".tsv"),
                            format_chain_stats(stats, target));
    if (i == 0) first = stats;
  }
  return first;
}

}  // namespace bbyol
