#include "bbyol/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "bbyol/errors.hpp"

namespace bbyol {

void ClassifierHead::validate() const {
  if (params.segments().size() != 2) throw DimensionError("classifier head needs weight and bias");
  const ad::Shape w{embed_dim, static_cast<std::size_t>(class_count)};
  const ad::Shape b{static_cast<std::size_t>(class_count)};
  if (params.segment("weight").shape != w || params.segment("bias").shape != b)
    throw DimensionError("classifier head shapes do not match embed_dim/class_count");
}

ClassifierHead init_head(std::size_t embed_dim, int classes, std::uint64_t seed) {
  if (embed_dim == 0 || classes < 1) throw ConfigError("head needs positive embed_dim and class count");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(embed_dim * static_cast<std::size_t>(classes));
  for (double& v : w) v = dist(rng);
  ClassifierHead head;
  head.params.add_segment("weight", {embed_dim, static_cast<std::size_t>(classes)}, w);
  head.params.add_segment("bias", {static_cast<std::size_t>(classes)});
  head.class_count = classes;
  head.embed_dim = embed_dim;
  return head;
}

void FineTuneConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("fine-tune lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("fine-tune momentum must lie in [0, 1)");
  if (batch < 1) throw ConfigError("fine-tune batch must be at least 1");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

Dataset subset_labels(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("label fraction must lie in (0, 1]");
  if (!data.y) throw DataError("subset_labels needs labeled data");
  if (fraction == 1.0) {
    Dataset full = data;
    full.split = SplitTag::Train;
    return full;
  }
  const int classes = data.class_count();
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(classes, 0)));
  for (std::size_t r = 0; r < data.rows(); ++r) by_class[static_cast<std::size_t>((*data.y)[r])].push_back(r);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (auto& rows : by_class) {
    if (rows.empty()) continue;
    const double target = fraction * static_cast<double>(rows.size());
    const std::size_t count = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(target + 0.5)));
    std::shuffle(rows.begin(), rows.end(), rng);
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(std::min(count, rows.size())));
  }
  if (keep.empty()) throw ContractError("label fraction selects no samples");
  std::sort(keep.begin(), keep.end());
  return take_rows(data, keep, SplitTag::Train);
}

ad::Tensor predict_logits(const ParamVector& encoder, const MlpSpec& spec, const ClassifierHead& head,
                          const ad::Tensor& x) {
  const ad::Tensor z = mlp_infer(encoder, spec, x);
  if (z.cols() != head.embed_dim) throw DimensionError("encoder output width does not match head");
  return ad::kernels::bias_add(ad::kernels::matmul(z, head.params.segment_tensor(0)), head.params.segment_tensor(1));
}

ad::Tensor predict_logits(const FineTunedModel& model, const ad::Tensor& x) {
  return predict_logits(model.encoder, model.encoder_spec(), model.head, x);
}

ad::Tensor predict_proba(const FineTunedModel& model, const ad::Tensor& x) {
  return ad::kernels::softmax_rows(predict_logits(model, x));
}

double mean_cross_entropy(const FineTunedModel& model, const Dataset& data) {
  if (!data.y) throw DataError("cross-entropy needs labels");
  ad::Tape tape;
  ad::Var logits = tape.constant(predict_logits(model, data.x));
  return ad::softmax_cross_entropy(logits, *data.y).value().item();
}

FineTunedModel finetune(const Snapshot& snapshot, const Dataset& labeled, const FineTuneConfig& cfg,
                        std::uint64_t seed, int classes, FineTuneLog* log) {
  cfg.validate();
  if (!labeled.y || labeled.rows() == 0) throw ContractError("fine-tuning needs non-empty labeled data");
  const int observed = labeled.class_count();
  if (classes == 0) classes = observed;
  for (int label : *labeled.y)
    if (label < 0 || label >= classes) throw DataError("class label " + std::to_string(label) + " out of range");

  const Dataset subset = subset_labels(labeled, cfg.label_fraction, seed);
  const MlpSpec spec = snapshot.encoder_spec();
  if (subset.cols() != spec.input_dim()) throw DimensionError("data width does not match encoder input");

  FineTunedModel model;
  model.encoder = snapshot.encoder;
  model.activation = snapshot.activation;
  model.head = init_head(spec.output_dim(), classes, seed ^ 0x68656164ULL);
  if (log) {
    log->labeled_count = subset.rows();
    log->epoch_loss.clear();
  }

  std::vector<double> vel_enc(model.encoder.total_dim(), 0.0);
  std::vector<double> vel_head(model.head.params.total_dim(), 0.0);
  const double mu = cfg.momentum;

  // Nesterov in the lookahead-free form: v = mu v + g; theta -= lr (g + mu v).
  auto apply = [&](ParamVector& params, std::vector<double>& vel) {
    auto theta = params.values();
    auto g = params.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i] + cfg.weight_decay * theta[i];
      vel[i] = mu * vel[i] + gi;
      theta[i] -= cfg.lr * (gi + mu * vel[i]);
    }
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& rows : minibatches(subset, cfg.batch, seed, epoch)) {
      const ad::Tensor xb = gather_rows(subset.x, rows);
      std::vector<int> yb;
      yb.reserve(rows.size());
      for (std::size_t r : rows) yb.push_back((*subset.y)[r]);

      ad::Tape tape;
      std::vector<ad::Var> enc_leaves, head_leaves;
      ad::Var z = mlp_forward(tape, model.encoder, spec, tape.constant(xb), !cfg.freeze_encoder, &enc_leaves);
      head_leaves.push_back(tape.leaf(model.head.params.segment_tensor(0), true));
      head_leaves.push_back(tape.leaf(model.head.params.segment_tensor(1), true));
      ad::Var loss = ad::softmax_cross_entropy(ad::bias_add(ad::matmul(z, head_leaves[0]), head_leaves[1]), yb);
      tape.backward(loss);
      total += loss.value().item() * static_cast<double>(rows.size());

      model.head.params.zero_grad();
      accumulate_grads(head_leaves, model.head.params);
      apply(model.head.params, vel_head);
      if (!cfg.freeze_encoder) {
        model.encoder.zero_grad();
        accumulate_grads(enc_leaves, model.encoder);
        apply(model.encoder, vel_enc);
      }
    }
    if (log) log->epoch_loss.push_back(total / static_cast<double>(subset.rows()));
  }
  model.encoder.zero_grad();
  model.head.params.zero_grad();
  return model;
}

}  // namespace bbyol
