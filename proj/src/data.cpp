#include "bbyol/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "bbyol/errors.hpp"

namespace bbyol {

const char* split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Pretrain: return "pretrain";
    case SplitTag::Train: return "train";
    case SplitTag::Test: return "test";
    case SplitTag::Ood: return "ood";
  }
  return "?";
}

SplitTag parse_split(const std::string& name) {
  if (name == "pretrain") return SplitTag::Pretrain;
  if (name == "train") return SplitTag::Train;
  if (name == "test") return SplitTag::Test;
  if (name == "ood") return SplitTag::Ood;
  throw DataError("unknown split tag '" + name + "'");
}

void ClusterSpec::validate() const {
  if (classes < 2) throw ConfigError("cluster data needs at least 2 classes");
  if (per_class < 1) throw ConfigError("cluster data needs at least 1 sample per class");
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  if (!(separation > 0.0)) throw ConfigError("separation must be positive");
  if (!(cluster_std >= 0.0)) throw ConfigError("cluster_std must be non-negative");
  if (!(warp >= 0.0)) throw ConfigError("warp must be non-negative");
}

int Dataset::class_count() const {
  if (!y || y->empty()) return 0;
  return *std::max_element(y->begin(), y->end()) + 1;
}

void Dataset::validate() const {
  if (x.rank() != 2) throw DataError("dataset features must be a matrix");
  if (y && y->size() != x.rows()) throw DataError("label count does not match row count");
  if (y)
    for (int label : *y)
      if (label < 0) throw DataError("negative class label");
  if (!x.all_finite()) throw DataError("non-finite feature value");
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{seed, tag, std::uint64_t{0x636c7573}};
  return std::mt19937_64(seq);
}

std::vector<double> random_direction(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm < 1e-9) {
    norm = 0.0;
    for (double& e : v) {
      e = normal(rng);
      norm += e * e;
    }
    norm = std::sqrt(norm);
  }
  for (double& e : v) e /= norm;
  return v;
}

ad::Tensor sample_around(const std::vector<std::vector<double>>& means, std::size_t rows, double stddev,
                         std::mt19937_64& rng, std::vector<int>* labels) {
  const std::size_t k = means.size(), dim = means.front().size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(rows * dim);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t c = i % k;
    if (labels) labels->push_back(static_cast<int>(c));
    for (std::size_t j = 0; j < dim; ++j) z[i * dim + j] = means[c][j] + stddev * normal(rng);
  }
  return ad::Tensor::matrix(rows, dim, std::move(z));
}

void put_spec(std::map<std::string, std::string>& meta, const ClusterSpec& spec) {
  meta["generator"] = "clusters";
  meta["classes"] = std::to_string(spec.classes);
  meta["per_class"] = std::to_string(spec.per_class);
  meta["seed"] = std::to_string(spec.seed);
}

}  // namespace

std::vector<std::vector<double>> cluster_means(const ClusterSpec& spec) {
  spec.validate();
  auto rng = stream(spec.seed, 1);
  std::vector<std::vector<double>> means;
  for (int c = 0; c < spec.classes; ++c) {
    auto dir = random_direction(spec.input_dim, rng);
    for (double& v : dir) v *= spec.separation;
    means.push_back(std::move(dir));
  }
  return means;
}

ad::Tensor warp_points(const ClusterSpec& spec, const ad::Tensor& latent) {
  const std::size_t d = spec.input_dim;
  if (latent.cols() != d) throw DimensionError("latent width does not match input_dim");
  auto rng = stream(spec.seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(d * d), b(d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : w) v = scale * normal(rng);
  for (double& v : b) v = 0.5 * normal(rng);
  const ad::Tensor pre = ad::kernels::bias_add(ad::kernels::matmul(latent, ad::Tensor::matrix(d, d, w)),
                                               ad::Tensor::vector(b));
  std::vector<double> out(latent.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = latent[i] + spec.warp * std::tanh(pre[i]);
  return ad::Tensor(latent.shape(), std::move(out));
}

Dataset make_clusters(const ClusterSpec& spec) {
  spec.validate();
  const auto means = cluster_means(spec);
  auto rng = stream(spec.seed, 3);
  Dataset ds;
  std::vector<int> labels;
  const std::size_t rows = static_cast<std::size_t>(spec.classes) * spec.per_class;
  ds.x = warp_points(spec, sample_around(means, rows, spec.cluster_std, rng, &labels));
  ds.y = std::move(labels);
  ds.source = spec;
  put_spec(ds.meta, spec);
  return ds;
}

OodMode parse_ood_mode(const std::string& name) {
  if (name == "shifted_means") return OodMode::ShiftedMeans;
  if (name == "scaled_variance") return OodMode::ScaledVariance;
  if (name == "uniform_box") return OodMode::UniformBox;
  throw ConfigError("unknown OOD mode '" + name + "'");
}

const char* ood_mode_name(OodMode mode) {
  switch (mode) {
    case OodMode::ShiftedMeans: return "shifted_means";
    case OodMode::ScaledVariance: return "scaled_variance";
    case OodMode::UniformBox: return "uniform_box";
  }
  return "?";
}

std::vector<std::vector<double>> ood_means(const ClusterSpec& spec, std::uint64_t seed) {
  auto rng = stream(seed, 4);
  std::vector<std::vector<double>> means;
  for (int c = 0; c < spec.classes; ++c) {
    auto dir = random_direction(spec.input_dim, rng);
    for (double& v : dir) v *= kOodMeanRadius * spec.separation;
    means.push_back(std::move(dir));
  }
  return means;
}

Dataset make_ood(const Dataset& reference, OodMode mode, std::uint64_t seed, std::size_t count) {
  if (!reference.source) throw ConfigError("OOD generation needs a reference made by make_clusters");
  const ClusterSpec& spec = *reference.source;
  const std::size_t rows = count ? count : reference.rows();
  auto rng = stream(seed, 5);
  Dataset ds;
  ds.split = SplitTag::Ood;
  switch (mode) {
    case OodMode::ShiftedMeans:
      ds.x = warp_points(spec, sample_around(ood_means(spec, seed), rows, spec.cluster_std, rng, nullptr));
      break;
    case OodMode::ScaledVariance:
      ds.x = warp_points(spec, sample_around(cluster_means(spec), rows, 3.0 * spec.cluster_std, rng, nullptr));
      break;
    case OodMode::UniformBox: {
      const std::size_t d = reference.cols();
      std::vector<double> lo(d, INFINITY), hi(d, -INFINITY);
      for (std::size_t r = 0; r < reference.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) {
          lo[c] = std::min(lo[c], reference.x.at(r, c));
          hi[c] = std::max(hi[c], reference.x.at(r, c));
        }
      std::vector<double> v(rows * d);
      for (std::size_t c = 0; c < d; ++c) {
        const double mid = 0.5 * (lo[c] + hi[c]), half = hi[c] - lo[c];
        lo[c] = mid - half;
        hi[c] = mid + half;
      }
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c)
          v[r * d + c] = std::uniform_real_distribution<double>(lo[c], hi[c])(rng);
      ds.x = ad::Tensor::matrix(rows, d, std::move(v));
      break;
    }
  }
  ds.meta["generator"] = "ood";
  ds.meta["mode"] = ood_mode_name(mode);
  ds.meta["seed"] = std::to_string(seed);
  ds.meta["reference_seed"] = std::to_string(spec.seed);
  return ds;
}

Dataset take_rows(const Dataset& source, const std::vector<std::size_t>& rows, SplitTag split) {
  Dataset out;
  out.x = gather_rows(source.x, rows);
  if (source.y) {
    std::vector<int> y;
    y.reserve(rows.size());
    for (std::size_t r : rows) y.push_back((*source.y)[r]);
    out.y = std::move(y);
  }
  out.split = split;
  out.source = source.source;
  out.meta = source.meta;
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation and batching

void AugmentationConfig::validate() const {
  if (!(noise_std >= 0.0)) throw ConfigError("augment noise_std must be non-negative");
  if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw ConfigError("augment mask_prob must lie in [0, 1)");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("augment scale range must satisfy 0 < a <= b");
}

namespace {

ad::Tensor augment_view(const ad::Tensor& batch, const AugmentationConfig& cfg, std::mt19937_64& rng) {
  const std::size_t rows = batch.rows(), cols = batch.cols();
  std::vector<double> out(batch.values().begin(), batch.values().end());
  std::uniform_real_distribution<double> jitter(cfg.scale_min, cfg.scale_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = cfg.scale_min == cfg.scale_max ? cfg.scale_min : jitter(rng);
    for (std::size_t c = 0; c < cols; ++c) {
      double& v = out[r * cols + c];
      v *= s;
      if (cfg.noise_std > 0.0) v += cfg.noise_std * normal(rng);
      if (cfg.mask_prob > 0.0 && unit(rng) < cfg.mask_prob) v = 0.0;
    }
  }
  return ad::Tensor(batch.shape(), std::move(out));
}

}  // namespace

std::pair<ad::Tensor, ad::Tensor> augment_pair(const ad::Tensor& batch, const AugmentationConfig& cfg,
                                               std::mt19937_64& rng) {
  cfg.validate();
  if (batch.rank() != 2 || batch.rows() == 0) throw ContractError("augment_pair needs a non-empty batch");
  ad::Tensor first = augment_view(batch, cfg, rng);
  ad::Tensor second = augment_view(batch, cfg, rng);
  return {std::move(first), std::move(second)};
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch, std::uint64_t seed,
                                                  std::uint64_t epoch) {
  if (batch < 1) throw ContractError("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed + epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch)));
  return out;
}

std::vector<std::vector<std::size_t>> minibatches(const Dataset& data, std::size_t batch, std::uint64_t seed,
                                                  std::uint64_t epoch) {
  return minibatches(data.rows(), batch, seed, epoch);
}

ad::Tensor gather_rows(const ad::Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t cols = x.cols();
  std::vector<double> out;
  out.reserve(rows.size() * cols);
  for (std::size_t r : rows) {
    if (r >= x.rows()) throw DimensionError("row index out of range");
    const auto src = x.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return ad::Tensor::unchecked({rows.size(), cols}, std::move(out));
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& path, const char* suffix) {
  return std::filesystem::path(path.string() + suffix);
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ostringstream hdr;
  hdr << "bbyol-dataset 1\n";
  hdr << "rows " << data.rows() << "\ncols " << data.cols() << "\n";
  hdr << "labels " << (data.y ? 1 : 0) << "\nsplit " << split_name(data.split) << "\n";
  if (data.source) {
    const ClusterSpec& s = *data.source;
    hdr.precision(17);
    hdr << "source.classes " << s.classes << "\nsource.per_class " << s.per_class << "\nsource.input_dim "
        << s.input_dim << "\nsource.separation " << s.separation << "\nsource.cluster_std " << s.cluster_std
        << "\nsource.warp " << s.warp << "\nsource.seed " << s.seed << "\n";
  }
  for (const auto& [k, v] : data.meta) hdr << "meta." << k << ' ' << v << "\n";
  detail::write_text_file(with_suffix(path, ".hdr"), hdr.str());

  detail::ByteWriter w;
  for (double v : data.x.values()) w.f64(v);
  if (data.y)
    for (int label : *data.y) w.i32(label);
  detail::write_file_bytes(with_suffix(path, ".bin"), w.bytes());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream hdr(with_suffix(path, ".hdr"));
  if (!hdr) throw IoError("cannot open dataset header '" + with_suffix(path, ".hdr").string() + "'");
  std::string line;
  if (!std::getline(hdr, line) || line != "bbyol-dataset 1") throw DataError("not a dataset header (version 1)");
  std::map<std::string, std::string> fields;
  while (std::getline(hdr, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw DataError("malformed dataset header line '" + line + "'");
    fields[line.substr(0, sp)] = line.substr(sp + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw DataError("dataset header lacks '" + key + "'");
    return it->second;
  };
  Dataset ds;
  const std::size_t rows = std::stoull(field("rows")), cols = std::stoull(field("cols"));
  const bool labeled = field("labels") == "1";
  ds.split = parse_split(field("split"));
  if (fields.count("source.seed")) {
    ClusterSpec s;
    s.classes = std::stoi(field("source.classes"));
    s.per_class = std::stoull(field("source.per_class"));
    s.input_dim = std::stoull(field("source.input_dim"));
    s.separation = std::stod(field("source.separation"));
    s.cluster_std = std::stod(field("source.cluster_std"));
    s.warp = std::stod(field("source.warp"));
    s.seed = std::stoull(field("source.seed"));
    ds.source = s;
  }
  for (const auto& [k, v] : fields)
    if (k.rfind("meta.", 0) == 0) ds.meta[k.substr(5)] = v;

  const auto bytes = detail::read_file_bytes(with_suffix(path, ".bin"));
  const std::size_t expected = rows * cols * 8 + (labeled ? rows * 4 : 0);
  if (bytes.size() != expected) throw DataError("dataset payload has " + std::to_string(bytes.size()) +
                                                " bytes, header implies " + std::to_string(expected));
  detail::ByteReader r(bytes.data(), bytes.size());
  std::vector<double> x(rows * cols);
  for (double& v : x) v = r.f64();
  ds.x = ad::Tensor::matrix(rows, cols, std::move(x));
  if (labeled) {
    std::vector<int> y(rows);
    for (int& v : y) v = r.i32();
    ds.y = std::move(y);
  }
  ds.validate();
  return ds;
}

}  // namespace bbyol
