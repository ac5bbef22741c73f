#include "bbyol/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "bbyol/digest.hpp"
#include "bbyol/errors.hpp"

namespace bbyol {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string fmt_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) out += fmt_double(values[i]);
    else out += std::to_string(values[i]);
  }
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> parse;
  std::function<std::string(const RunConfig&)> format;
};

#define BB_DOUBLE(sec, member, name)                                                        \
  Field{#sec, name, [](RunConfig& c, const std::string& v) { c.sec.member = to_double(name, v); }, \
        [](const RunConfig& c) { return fmt_double(c.sec.member); }}
#define BB_INT(sec, member, name)                                                        \
  Field{#sec, name, [](RunConfig& c, const std::string& v) { c.sec.member = to_int(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.sec.member); }}
#define BB_SIZE(sec, member, name)                                                        \
  Field{#sec, name,                                                                       \
        [](RunConfig& c, const std::string& v) {                                          \
          c.sec.member = static_cast<decltype(c.sec.member)>(to_uint(name, v));            \
        },                                                                                \
        [](const RunConfig& c) { return std::to_string(c.sec.member); }}
#define BB_BOOL(sec, member, name)                                                        \
  Field{#sec, name, [](RunConfig& c, const std::string& v) { c.sec.member = to_bool(name, v); }, \
        [](const RunConfig& c) { return std::string(c.sec.member ? "true" : "false"); }}
#define BB_STRING(sec, member, name)                                               \
  Field{#sec, name, [](RunConfig& c, const std::string& v) { c.sec.member = v; }, \
        [](const RunConfig& c) { return c.sec.member; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"data", "source",
            [](RunConfig& c, const std::string& v) {
              if (v == "generator") c.data.source = DataSource::Generator;
              else if (v == "files") c.data.source = DataSource::Files;
              else throw ConfigError("data.source must be generator or files");
            },
            [](const RunConfig& c) {
              return std::string(c.data.source == DataSource::Generator ? "generator" : "files");
            }},
      Field{"data", "classes", [](RunConfig& c, const std::string& v) { c.data.classes = static_cast<int>(to_int("classes", v)); },
            [](const RunConfig& c) { return std::to_string(c.data.classes); }},
      BB_SIZE(data, input_dim, "input_dim"),
      BB_DOUBLE(data, separation, "separation"),
      BB_DOUBLE(data, cluster_std, "cluster_std"),
      BB_DOUBLE(data, warp, "warp"),
      BB_SIZE(data, data_seed, "data_seed"),
      BB_SIZE(data, pretrain_per_class, "pretrain_per_class"),
      BB_SIZE(data, train_per_class, "train_per_class"),
      BB_SIZE(data, test_per_class, "test_per_class"),
      Field{"data", "ood_mode", [](RunConfig& c, const std::string& v) { c.data.ood_mode = parse_ood_mode(v); },
            [](const RunConfig& c) { return std::string(ood_mode_name(c.data.ood_mode)); }},
      BB_SIZE(data, ood_count, "ood_count"),
      BB_STRING(data, pretrain_path, "pretrain_path"),
      BB_STRING(data, train_path, "train_path"),
      BB_STRING(data, test_path, "test_path"),
      BB_STRING(data, ood_path, "ood_path"),
      BB_DOUBLE(data, augment.noise_std, "augment_noise_std"),
      BB_DOUBLE(data, augment.mask_prob, "augment_mask_prob"),
      BB_DOUBLE(data, augment.scale_min, "augment_scale_min"),
      BB_DOUBLE(data, augment.scale_max, "augment_scale_max"),

      Field{"model", "encoder_hidden",
            [](RunConfig& c, const std::string& v) {
              c.model.encoder_hidden.clear();
              for (const auto& item : split_list(v)) c.model.encoder_hidden.push_back(to_uint("encoder_hidden", item));
            },
            [](const RunConfig& c) { return fmt_list(c.model.encoder_hidden); }},
      BB_SIZE(model, embed_dim, "embed_dim"),
      BB_SIZE(model, projector_hidden, "projector_hidden"),
      BB_SIZE(model, proj_dim, "proj_dim"),
      BB_SIZE(model, predictor_hidden, "predictor_hidden"),
      Field{"model", "activation", [](RunConfig& c, const std::string& v) { c.model.activation = parse_activation(v); },
            [](const RunConfig& c) { return std::string(activation_name(c.model.activation)); }},
      BB_DOUBLE(model, tau, "tau"),

      Field{"sampler", "kind", [](RunConfig& c, const std::string& v) { c.sampler.kind = parse_sampler_kind(v); },
            [](const RunConfig& c) { return std::string(sampler_kind_name(c.sampler.kind)); }},
      BB_DOUBLE(sampler, lr0, "lr0"),
      BB_DOUBLE(sampler, beta, "beta"),
      BB_DOUBLE(sampler, temperature, "temperature"),
      BB_INT(sampler, cycle_len, "cycle_len"),
      BB_INT(sampler, total_steps, "total_steps"),
      BB_SIZE(sampler, batch, "batch"),
      BB_DOUBLE(sampler, noise_start_frac, "noise_start_frac"),
      BB_DOUBLE(sampler, prior_std, "prior_std"),
      BB_BOOL(sampler, temper_drift, "temper_drift"),
      BB_INT(sampler, n_dataset, "n_dataset"),
      BB_SIZE(sampler, ensemble_size, "ensemble_size"),

      BB_DOUBLE(finetune, lr, "lr"),
      BB_DOUBLE(finetune, momentum, "momentum"),
      BB_SIZE(finetune, batch, "batch"),
      BB_SIZE(finetune, epochs, "epochs"),
      Field{"finetune", "label_fractions",
            [](RunConfig& c, const std::string& v) {
              c.finetune.label_fractions.clear();
              for (const auto& item : split_list(v)) c.finetune.label_fractions.push_back(to_double("label_fractions", item));
            },
            [](const RunConfig& c) { return fmt_list(c.finetune.label_fractions); }},
      BB_BOOL(finetune, freeze_encoder, "freeze_encoder"),
      BB_DOUBLE(finetune, weight_decay, "weight_decay"),

      BB_SIZE(eval, bins, "bins"),
      Field{"eval", "ood_score", [](RunConfig& c, const std::string& v) { c.eval.ood_score = parse_ood_score(v); },
            [](const RunConfig& c) { return std::string(ood_score_name(c.eval.ood_score)); }},
      BB_DOUBLE(eval, ood_label_fraction, "ood_label_fraction"),
      BB_BOOL(eval, cross_seed_ensemble, "cross_seed_ensemble"),

      BB_SIZE(diag, dim, "dim"),
      BB_INT(diag, steps, "steps"),
      BB_INT(diag, burn_in, "burn_in"),
      BB_DOUBLE(diag, lr, "lr"),

      Field{"run", "seeds", [](RunConfig& c, const std::string& v) { c.run.seeds = parse_seed_list(v); },
            [](const RunConfig& c) { return fmt_list(c.run.seeds); }},
      BB_STRING(run, output_dir, "output_dir"),
      BB_STRING(run, method, "method"),
  };
  return table;
}

#undef BB_DOUBLE
#undef BB_INT
#undef BB_SIZE
#undef BB_BOOL
#undef BB_STRING

const Field* find_field(const std::string& section, const std::string& key) {
  for (const Field& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(text)) seeds.push_back(to_uint("seeds", item));
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      static const std::set<std::string> known{"data", "model", "sampler", "finetune", "eval", "diag", "run"};
      if (!known.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(section, key);
    if (!f) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      f->parse(cfg, value);
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.format(config) + "\n";
  }
  return out;
}

std::string config_digest(const RunConfig& config) {
  // The output location does not change any result.
  RunConfig c = config;
  c.run.output_dir.clear();
  return hex64(fnv1a64(format_config(c)));
}

void RunConfig::validate() const {
  if (data.source == DataSource::Generator) {
    ClusterSpec spec;
    spec.classes = data.classes;
    spec.per_class = std::max<std::size_t>(1, data.pretrain_per_class);
    spec.input_dim = data.input_dim;
    spec.separation = data.separation;
    spec.cluster_std = data.cluster_std;
    spec.warp = data.warp;
    spec.validate();
    if (data.pretrain_per_class == 0 || data.train_per_class == 0 || data.test_per_class == 0)
      throw ConfigError("per-class split sizes must be positive");
    if (data.ood_count == 0) throw ConfigError("ood_count must be positive");
  } else if (data.pretrain_path.empty() || data.train_path.empty() || data.test_path.empty()) {
    throw ConfigError("data.source = files needs pretrain_path, train_path and test_path");
  }
  data.augment.validate();
  arch().validate();
  if (!(model.tau >= 0.0 && model.tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (sampler.batch == 0) throw ConfigError("sampler batch must be positive");
  if (sampler.n_dataset < 0) throw ConfigError("n_dataset must be non-negative");
  sampler_config(1).validate();
  if (finetune.label_fractions.empty()) throw ConfigError("label_fractions is empty");
  for (double f : finetune.label_fractions) finetune_config(f).validate();
  finetune_config(eval.ood_label_fraction).validate();
  if (eval.bins == 0) throw ConfigError("eval bins must be positive");
  if (diag.dim == 0 || diag.steps < 2) throw ConfigError("diag needs dim >= 1 and steps >= 2");
  if (!(diag.lr > 0.0)) throw ConfigError("diag lr must be positive");
  if (run.seeds.empty()) throw ConfigError("at least one seed is required");
}

TwinArch RunConfig::arch() const {
  TwinArch a;
  a.input_dim = data.input_dim;
  a.encoder_hidden = model.encoder_hidden;
  a.embed_dim = model.embed_dim;
  a.projector_hidden = model.projector_hidden;
  a.proj_dim = model.proj_dim;
  a.predictor_hidden = model.predictor_hidden;
  a.activation = model.activation;
  return a;
}

SamplerConfig RunConfig::sampler_config(std::size_t n) const {
  SamplerConfig s;
  s.kind = sampler.kind;
  s.lr0 = sampler.lr0;
  s.beta = sampler.beta;
  s.temperature = sampler.temperature;
  s.cycle_len = sampler.cycle_len;
  s.total_steps = sampler.total_steps;
  s.n_dataset = sampler.n_dataset > 0 ? sampler.n_dataset : static_cast<std::int64_t>(n);
  s.noise_start_frac = sampler.noise_start_frac;
  s.prior_std = sampler.prior_std;
  s.temper_drift = sampler.temper_drift;
  return s;
}

FineTuneConfig RunConfig::finetune_config(double label_fraction) const {
  FineTuneConfig f;
  f.lr = finetune.lr;
  f.momentum = finetune.momentum;
  f.batch = finetune.batch;
  f.epochs = finetune.epochs;
  f.label_fraction = label_fraction;
  f.freeze_encoder = finetune.freeze_encoder;
  f.weight_decay = finetune.weight_decay;
  return f;
}

std::string RunConfig::method_name() const {
  if (!run.method.empty()) return run.method;
  switch (sampler.kind) {
    case SamplerKind::MapSgd: return "BYOL";
    case SamplerKind::SnapSgd: return "SnapBYOL";
    case SamplerKind::Sgld: return "SGLD-BYOL";
    case SamplerKind::Sghmc: return "SGHMC-BYOL";
    case SamplerKind::Csghmc: return "BBYOL";
  }
  return "?";
}

}  // namespace bbyol
