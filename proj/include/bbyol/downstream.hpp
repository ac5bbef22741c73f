#pragma once

// Semi-supervised fine-tuning of posterior snapshots into classifiers.

#include <cstdint>
#include <vector>

#include "bbyol/autodiff.hpp"
#include "bbyol/byol.hpp"
#include "bbyol/data.hpp"
#include "bbyol/posterior.hpp"

namespace bbyol {

/// Linear softmax head: "weight" (embed_dim x C) and "bias" (C).
struct ClassifierHead {
  ParamVector params;
  int class_count = 0;
  std::size_t embed_dim = 0;

  void validate() const;
};

/// Weights U(-1/sqrt(embed_dim), 1/sqrt(embed_dim)), biases zero.
ClassifierHead init_head(std::size_t embed_dim, int classes, std::uint64_t seed);

struct FineTuneConfig {
  double lr = 1e-2;
  /// Nesterov momentum coefficient.
  double momentum = 0.9;
  std::size_t batch = 80;
  std::size_t epochs = 50;
  double label_fraction = 1.0;
  bool freeze_encoder = false;
  double weight_decay = 0.0;

  void validate() const;
};

struct FineTunedModel {
  ParamVector encoder;
  Activation activation = Activation::Tanh;
  ClassifierHead head;

  MlpSpec encoder_spec() const { return mlp_spec_from_params(encoder, activation); }
};

struct FineTuneLog {
  std::size_t labeled_count = 0;
  std::vector<double> epoch_loss;
};

/// Stratified subset: per class round-half-up(fraction * count), at least one,
/// chosen by seed and returned in original row order.
Dataset subset_labels(const Dataset& data, double fraction, std::uint64_t seed);

/// Copies the snapshot encoder, draws a head and minimizes mean softmax
/// cross-entropy on subset_labels(labeled, cfg.label_fraction, seed) by SGD with
/// Nesterov momentum. `classes` 0 infers the class count from the labels.
FineTunedModel finetune(const Snapshot& snapshot, const Dataset& labeled, const FineTuneConfig& cfg,
                        std::uint64_t seed, int classes = 0, FineTuneLog* log = nullptr);

ad::Tensor predict_logits(const ParamVector& encoder, const MlpSpec& spec, const ClassifierHead& head,
                          const ad::Tensor& x);
ad::Tensor predict_logits(const FineTunedModel& model, const ad::Tensor& x);
/// Row-wise softmax of predict_logits.
ad::Tensor predict_proba(const FineTunedModel& model, const ad::Tensor& x);

/// Mean cross-entropy of a model on labeled data.
double mean_cross_entropy(const FineTunedModel& model, const Dataset& data);

}  // namespace bbyol
