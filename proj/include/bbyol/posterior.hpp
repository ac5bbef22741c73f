#pragma once

// Posterior samples over encoder parameters: collection at cycle ends,
// the checkpoint format, Bayesian model averaging and predictive entropy.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bbyol/autodiff.hpp"
#include "bbyol/byol.hpp"
#include "bbyol/errors.hpp"
#include "bbyol/sampler.hpp"

namespace bbyol {

struct Snapshot {
  ParamVector encoder;
  Activation activation = Activation::Tanh;
  std::int64_t step = 0;
  std::int64_t cycle = 0;
  double pretrain_loss = 0.0;
  SamplerKind sampler_kind = SamplerKind::Csghmc;

  MlpSpec encoder_spec() const { return mlp_spec_from_params(encoder, activation); }
};

struct RunMeta {
  std::uint64_t seed = 0;
  std::string config_digest;
  /// Extra key/value pairs (steps_per_epoch, method, ...).
  std::map<std::string, std::string> extra;
};

class PosteriorEnsemble {
 public:
  PosteriorEnsemble() = default;
  explicit PosteriorEnsemble(RunMeta meta) : meta_(std::move(meta)) {}

  /// Deep-copies the online encoder of `model`.
  const Snapshot& collect(const TwinModel& model, std::int64_t step, std::int64_t cycle, double loss,
                          SamplerKind kind);
  void append(Snapshot snapshot);

  std::size_t size() const noexcept { return snapshots_.size(); }
  bool empty() const noexcept { return snapshots_.empty(); }
  const Snapshot& operator[](std::size_t i) const { return snapshots_.at(i); }
  const std::vector<Snapshot>& snapshots() const noexcept { return snapshots_; }
  const RunMeta& meta() const noexcept { return meta_; }
  RunMeta& meta() noexcept { return meta_; }

  /// Keeps only the `count` most recent snapshots (all when count is 0 or >= size).
  void keep_last(std::size_t count);
  /// Keeps the listed snapshot indices in their original order.
  void select(const std::vector<std::size_t>& indices);

 private:
  RunMeta meta_;
  std::vector<Snapshot> snapshots_;
};

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   magic "BBYOLCKP" | u32 version | u64 body_length | body | u32 crc32(magic..body)
//   body: str meta_text | u32 record_count | records
//   record: str tag | i64 step | i64 cycle | f64 loss | u32 segment_count |
//           segments (str name | u32 rank | u64 dims[rank] | u64 offset | u64 length) |
//           u64 value_count | f64 values[value_count]
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ArchiveRecord {
  std::string tag;
  std::int64_t step = 0;
  std::int64_t cycle = 0;
  double loss = 0.0;
  ParamVector params;
};

struct Archive {
  std::string meta_text;
  std::vector<ArchiveRecord> records;
};

enum class CheckpointFault { BadMagic, VersionMismatch, Truncated, ChecksumMismatch, Malformed };

class CheckpointError : public Error {
 public:
  CheckpointFault fault() const noexcept { return fault_; }
  CheckpointError(CheckpointFault fault, const std::string& what) : Error(ErrorKind::Io, what), fault_(fault) {}

 private:
  CheckpointFault fault_;
};

std::vector<std::uint8_t> encode_archive(const Archive& archive);
Archive decode_archive(std::span<const std::uint8_t> bytes);
void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

/// key=value lines; values must not contain newlines.
std::string format_meta(const std::map<std::string, std::string>& fields);
std::map<std::string, std::string> parse_meta(const std::string& text);

void save_ensemble(const PosteriorEnsemble& ensemble, const std::filesystem::path& path);
PosteriorEnsemble load_ensemble(const std::filesystem::path& path);

/// Digest over the layout and bit patterns of a parameter vector.
std::string params_digest(const ParamVector& params);

// ---------------------------------------------------------------------------
// Marginalization

struct FineTunedModel;

/// Mean of the members' softmax outputs over the first `prefix` members
/// (all when prefix is 0). Rows sum to 1.
ad::Tensor bma_predict(std::span<const FineTunedModel> members, const ad::Tensor& x, std::size_t prefix = 0);
/// Same, checking that there is one fine-tuned member per snapshot.
ad::Tensor bma_predict(const PosteriorEnsemble& ensemble, std::span<const FineTunedModel> members,
                       const ad::Tensor& x, std::size_t prefix = 0);

/// -sum p ln p with 0 ln 0 = 0.
double predictive_entropy(std::span<const double> p);
std::vector<double> predictive_entropy_rows(const ad::Tensor& probs);

}  // namespace bbyol
