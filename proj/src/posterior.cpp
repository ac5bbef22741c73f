#include "bbyol/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <zlib.h>

#include "binary_io.hpp"
#include "bbyol/digest.hpp"
#include "bbyol/downstream.hpp"

namespace bbyol {

// ---------------------------------------------------------------------------
// Ensemble

const Snapshot& PosteriorEnsemble::collect(const TwinModel& model, std::int64_t step, std::int64_t cycle,
                                           double loss, SamplerKind kind) {
  Snapshot s;
  s.encoder = model.online_encoder;
  s.encoder.zero_grad();
  s.activation = model.arch.activation;
  s.step = step;
  s.cycle = cycle;
  s.pretrain_loss = loss;
  s.sampler_kind = kind;
  append(std::move(s));
  return snapshots_.back();
}

void PosteriorEnsemble::append(Snapshot snapshot) {
  if (!snapshots_.empty() && !snapshots_.front().encoder.same_layout(snapshot.encoder)) {
    throw ContractError("snapshot encoder layout differs from the ensemble");
  }
  snapshots_.push_back(std::move(snapshot));
}

void PosteriorEnsemble::keep_last(std::size_t count) {
  if (count == 0 || count >= snapshots_.size()) return;
  snapshots_.erase(snapshots_.begin(), snapshots_.end() - static_cast<std::ptrdiff_t>(count));
}

void PosteriorEnsemble::select(const std::vector<std::size_t>& indices) {
  std::vector<Snapshot> kept;
  for (std::size_t i : indices) {
    if (i >= snapshots_.size())
      throw ContractError("snapshot index " + std::to_string(i) + " out of range for ensemble of " +
                          std::to_string(snapshots_.size()));
    kept.push_back(snapshots_[i]);
  }
  snapshots_ = std::move(kept);
}

// ---------------------------------------------------------------------------
// Archive codec

namespace {

constexpr char kMagic[8] = {'B', 'B', 'Y', 'O', 'L', 'C', 'K', 'P'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8;

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_archive(const Archive& archive) {
  detail::ByteWriter body;
  body.str(archive.meta_text);
  body.u32(static_cast<std::uint32_t>(archive.records.size()));
  for (const ArchiveRecord& rec : archive.records) {
    body.str(rec.tag);
    body.u64(static_cast<std::uint64_t>(rec.step));
    body.u64(static_cast<std::uint64_t>(rec.cycle));
    body.f64(rec.loss);
    body.u32(static_cast<std::uint32_t>(rec.params.segments().size()));
    for (const Segment& s : rec.params.segments()) {
      body.str(s.name);
      body.u32(static_cast<std::uint32_t>(s.shape.size()));
      for (std::size_t d : s.shape) body.u64(d);
      body.u64(s.offset);
      body.u64(s.length);
    }
    body.u64(rec.params.total_dim());
    for (double v : rec.params.values()) body.f64(v);
  }

  detail::ByteWriter out;
  out.raw(std::string(kMagic, sizeof kMagic));
  out.u32(kCheckpointVersion);
  out.u64(body.bytes().size());
  auto& bytes = out.bytes();
  bytes.insert(bytes.end(), body.bytes().begin(), body.bytes().end());
  out.u32(crc32_of(bytes.data(), bytes.size()));
  return std::move(out.bytes());
}

Archive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) throw CheckpointError(CheckpointFault::Truncated, "checkpoint shorter than its header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(CheckpointFault::BadMagic, "not a checkpoint file (bad magic)");
  detail::ByteReader header(bytes.data() + 8, kHeaderSize - 8);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointFault::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                                ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::uint64_t body_len = header.u64();
  if (bytes.size() - kHeaderSize < 4 || bytes.size() - kHeaderSize - 4 < body_len)
    throw CheckpointError(CheckpointFault::Truncated, "checkpoint truncated");
  if (bytes.size() != kHeaderSize + body_len + 4)
    throw CheckpointError(CheckpointFault::Malformed, "trailing bytes after checkpoint");
  detail::ByteReader trailer(bytes.data() + kHeaderSize + body_len, 4);
  if (trailer.u32() != crc32_of(bytes.data(), kHeaderSize + body_len))
    throw CheckpointError(CheckpointFault::ChecksumMismatch, "checkpoint checksum mismatch");

  Archive archive;
  try {
    detail::ByteReader r(bytes.data() + kHeaderSize, body_len);
    archive.meta_text = r.str();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      ArchiveRecord rec;
      rec.tag = r.str();
      rec.step = static_cast<std::int64_t>(r.u64());
      rec.cycle = static_cast<std::int64_t>(r.u64());
      rec.loss = r.f64();
      const std::uint32_t segs = r.u32();
      std::vector<Segment> table;
      for (std::uint32_t s = 0; s < segs; ++s) {
        Segment seg;
        seg.name = r.str();
        const std::uint32_t rank = r.u32();
        for (std::uint32_t d = 0; d < rank; ++d) seg.shape.push_back(r.u64());
        seg.offset = r.u64();
        seg.length = r.u64();
        table.push_back(std::move(seg));
      }
      const std::uint64_t n = r.u64();
      if (n > r.remaining() / 8) throw detail::Truncated{};
      std::vector<double> values(n);
      for (double& v : values) v = r.f64();
      for (const Segment& seg : table) {
        if (seg.offset != rec.params.total_dim() || seg.length != ad::numel(seg.shape) || seg.offset + seg.length > n)
          throw CheckpointError(CheckpointFault::Malformed, "inconsistent segment table entry '" + seg.name + "'");
        rec.params.add_segment(seg.name, seg.shape,
                               std::span<const double>(values).subspan(seg.offset, seg.length));
      }
      if (rec.params.total_dim() != n) throw CheckpointError(CheckpointFault::Malformed, "segment table does not cover payload");
      archive.records.push_back(std::move(rec));
    }
    if (r.remaining() != 0) throw CheckpointError(CheckpointFault::Malformed, "unparsed bytes in checkpoint body");
  } catch (const detail::Truncated&) {
    throw CheckpointError(CheckpointFault::Malformed, "checkpoint body ends mid-record");
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(CheckpointFault::Malformed, e.what());
  }
  return archive;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint '" + path.string() + "' does not exist");
  const auto bytes = detail::read_file_bytes(path);
  return decode_archive(bytes);
}

std::string format_meta(const std::map<std::string, std::string>& fields) {
  std::string out;
  for (const auto& [k, v] : fields) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ContractError("metadata '" + k + "' contains a reserved character");
    out += k + "=" + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> parse_meta(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(CheckpointFault::Malformed, "metadata line without '='");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void save_ensemble(const PosteriorEnsemble& ensemble, const std::filesystem::path& path) {
  std::map<std::string, std::string> meta = ensemble.meta().extra;
  meta["kind"] = "posterior_ensemble";
  meta["seed"] = std::to_string(ensemble.meta().seed);
  meta["config_digest"] = ensemble.meta().config_digest;
  meta["snapshots"] = std::to_string(ensemble.size());
  if (!ensemble.empty()) meta["activation"] = activation_name(ensemble[0].activation);

  Archive archive;
  archive.meta_text = format_meta(meta);
  for (const Snapshot& s : ensemble.snapshots()) {
    archive.records.push_back(ArchiveRecord{sampler_kind_name(s.sampler_kind), s.step, s.cycle, s.pretrain_loss, s.encoder});
  }
  write_archive(archive, path);
}

PosteriorEnsemble load_ensemble(const std::filesystem::path& path) {
  Archive archive = read_archive(path);
  auto meta = parse_meta(archive.meta_text);
  if (meta["kind"] != "posterior_ensemble") throw CheckpointError(CheckpointFault::Malformed, "file is not a posterior ensemble");
  RunMeta run;
  run.seed = std::stoull(meta["seed"]);
  run.config_digest = meta["config_digest"];
  const Activation act = meta.count("activation") ? parse_activation(meta["activation"]) : Activation::Tanh;
  for (const char* k : {"kind", "seed", "config_digest", "snapshots", "activation"}) meta.erase(k);
  run.extra = std::move(meta);

  PosteriorEnsemble ensemble(std::move(run));
  for (ArchiveRecord& rec : archive.records) {
    Snapshot s;
    s.encoder = std::move(rec.params);
    s.activation = act;
    s.step = rec.step;
    s.cycle = rec.cycle;
    s.pretrain_loss = rec.loss;
    s.sampler_kind = parse_sampler_kind(rec.tag);
    ensemble.append(std::move(s));
  }
  return ensemble;
}

std::string params_digest(const ParamVector& params) {
  detail::ByteWriter w;
  for (const Segment& s : params.segments()) {
    w.str(s.name);
    for (std::size_t d : s.shape) w.u64(d);
  }
  for (double v : params.values()) w.f64(v);
  return hex64(fnv1a64(w.bytes()));
}

// ---------------------------------------------------------------------------
// Marginalization

ad::Tensor bma_predict(std::span<const FineTunedModel> members, const ad::Tensor& x, std::size_t prefix) {
  if (members.empty()) throw ContractError("model averaging needs at least one member");
  const std::size_t count = prefix == 0 ? members.size() : prefix;
  if (count > members.size()) throw ContractError("prefix exceeds ensemble size");
  ad::Tensor avg = predict_proba(members[0], x);
  for (std::size_t s = 1; s < count; ++s) {
    const ad::Tensor p = predict_proba(members[s], x);
    if (p.shape() != avg.shape()) throw DimensionError("ensemble members disagree on class count");
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p[i];
  }
  if (count > 1) {
    const double inv = static_cast<double>(count);
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] /= inv;
  }
  return avg;
}

ad::Tensor bma_predict(const PosteriorEnsemble& ensemble, std::span<const FineTunedModel> members,
                       const ad::Tensor& x, std::size_t prefix) {
  if (ensemble.empty()) throw ContractError("prediction from an empty ensemble");
  if (members.size() != ensemble.size()) {
    throw ContractError("got " + std::to_string(members.size()) + " fine-tuned members for " +
                        std::to_string(ensemble.size()) + " snapshots");
  }
  return bma_predict(members, x, prefix);
}

double predictive_entropy(std::span<const double> p) {
  double total = 0.0, h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("probability entries must be finite and non-negative");
    total += v;
    if (v > 0.0) h -= v * std::log(v);
  }
  if (std::abs(total - 1.0) > 1e-6) throw ContractError("probabilities sum to " + std::to_string(total));
  return h;
}

std::vector<double> predictive_entropy_rows(const ad::Tensor& probs) {
  std::vector<double> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) out[r] = predictive_entropy(probs.row(r));
  return out;
}

}  // namespace bbyol
