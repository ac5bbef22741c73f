#pragma once

// Synthetic nonlinear cluster data, its out-of-distribution counterparts, the
// vector-space augmentation family used to draw view pairs, and minibatching.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bbyol/autodiff.hpp"

namespace bbyol {

enum class SplitTag { Pretrain, Train, Test, Ood };

const char* split_name(SplitTag tag);
SplitTag parse_split(const std::string& name);

/// Generator parameters of a cluster world. `seed` fixes the class means, the
/// warp layer and the sample stream.
struct ClusterSpec {
  int classes = 4;
  std::size_t per_class = 100;
  std::size_t input_dim = 8;
  double separation = 3.0;
  double cluster_std = 1.0;
  /// Strength of the residual tanh warp applied after sampling.
  double warp = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  ad::Tensor x;
  std::optional<std::vector<int>> y;
  SplitTag split = SplitTag::Pretrain;
  /// Generator that produced this data, when it came from make_clusters.
  std::optional<ClusterSpec> source;
  /// Free-form generator parameters persisted with the dataset.
  std::map<std::string, std::string> meta;

  std::size_t rows() const { return x.rows(); }
  std::size_t cols() const { return x.cols(); }
  int class_count() const;
  void validate() const;
};

/// Class means on separation-scaled random unit directions.
std::vector<std::vector<double>> cluster_means(const ClusterSpec& spec);
/// Maps latent points z to z + warp * tanh(W z + b) with W, b fixed by spec.seed.
ad::Tensor warp_points(const ClusterSpec& spec, const ad::Tensor& latent);

/// classes * per_class rows; row i has label i mod classes.
Dataset make_clusters(const ClusterSpec& spec);

enum class OodMode { ShiftedMeans, ScaledVariance, UniformBox };
OodMode parse_ood_mode(const std::string& name);
const char* ood_mode_name(OodMode mode);

/// Radius multiple of the separation at which shifted means are placed.
inline constexpr double kOodMeanRadius = 4.5;

/// Unlabeled data with the reference's input width; `count` 0 means reference rows.
Dataset make_ood(const Dataset& reference, OodMode mode, std::uint64_t seed, std::size_t count = 0);
/// Latent means used by the shifted_means mode.
std::vector<std::vector<double>> ood_means(const ClusterSpec& spec, std::uint64_t seed);

Dataset take_rows(const Dataset& source, const std::vector<std::size_t>& rows, SplitTag split);

struct AugmentationConfig {
  double noise_std = 0.1;
  double mask_prob = 0.1;
  double scale_min = 0.8;
  double scale_max = 1.2;

  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

/// Two independent draws of per-row jitter, additive noise and coordinate masking.
std::pair<ad::Tensor, ad::Tensor> augment_pair(const ad::Tensor& batch, const AugmentationConfig& cfg,
                                               std::mt19937_64& rng);

/// Permutation of 0..n-1 seeded by seed + epoch, chunked into batches; the last may be short.
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch, std::uint64_t seed,
                                                  std::uint64_t epoch);
std::vector<std::vector<std::size_t>> minibatches(const Dataset& data, std::size_t batch, std::uint64_t seed,
                                                  std::uint64_t epoch);
ad::Tensor gather_rows(const ad::Tensor& x, const std::vector<std::size_t>& rows);

/// Writes <path>.hdr (text) and <path>.bin (little-endian payload).
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace bbyol
