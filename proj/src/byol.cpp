#include "bbyol/byol.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "bbyol/errors.hpp"

namespace bbyol {

// ---------------------------------------------------------------------------
// ParamVector

void ParamVector::add_segment(std::string name, ad::Shape shape) {
  const std::size_t n = ad::numel(shape);
  std::vector<double> zeros(n, 0.0);
  add_segment(std::move(name), std::move(shape), zeros);
}

void ParamVector::add_segment(std::string name, ad::Shape shape, std::span<const double> values) {
  for (const auto& s : segments_)
    if (s.name == name) throw ContractError("duplicate parameter segment '" + name + "'");
  const std::size_t n = ad::numel(shape);
  if (values.size() != n) throw DimensionError("segment '" + name + "' expects " + std::to_string(n) + " values");
  segments_.push_back(Segment{std::move(name), std::move(shape), values_.size(), n});
  values_.insert(values_.end(), values.begin(), values.end());
  grad_.resize(values_.size(), 0.0);
}

const Segment& ParamVector::segment(std::string_view name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw ContractError("no parameter segment named '" + std::string(name) + "'");
}

std::span<const double> ParamVector::segment_values(std::size_t index) const {
  const Segment& s = segments_.at(index);
  return std::span<const double>(values_).subspan(s.offset, s.length);
}

std::span<double> ParamVector::segment_values(std::size_t index) {
  const Segment& s = segments_.at(index);
  return std::span<double>(values_).subspan(s.offset, s.length);
}

ad::Tensor ParamVector::segment_tensor(std::size_t index) const {
  const auto v = segment_values(index);
  return ad::Tensor(segments_[index].shape, std::vector<double>(v.begin(), v.end()));
}

void ParamVector::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void ParamVector::unflatten(std::span<const double> flat) {
  if (flat.size() != values_.size()) {
    throw DimensionError("unflatten expects " + std::to_string(values_.size()) + " values, got " +
                         std::to_string(flat.size()));
  }
  std::copy(flat.begin(), flat.end(), values_.begin());
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i)
    if (segments_[i].name != other.segments_[i].name || segments_[i].shape != other.segments_[i].shape)
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// MLP

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

const char* activation_name(Activation act) { return act == Activation::Tanh ? "tanh" : "relu"; }

namespace {

std::string weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

void validate_spec(const MlpSpec& spec) {
  if (spec.widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  for (std::size_t w : spec.widths)
    if (w == 0) throw ConfigError("MLP widths must be positive");
}

}  // namespace

ParamVector init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  std::mt19937_64 rng(seed);
  ParamVector params;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t fan_in = spec.widths[l], fan_out = spec.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = dist(rng);
    params.add_segment(weight_name(l), {fan_in, fan_out}, w);
    params.add_segment(bias_name(l), {fan_out});
  }
  return params;
}

MlpSpec mlp_spec_from_params(const ParamVector& params, Activation activation) {
  MlpSpec spec;
  spec.activation = activation;
  const auto& segs = params.segments();
  if (segs.empty() || segs.size() % 2 != 0) throw DataError("parameter vector is not an MLP layout");
  for (std::size_t l = 0; l < segs.size() / 2; ++l) {
    const Segment& w = segs[2 * l];
    if (w.name != weight_name(l) || w.shape.size() != 2) throw DataError("unexpected segment '" + w.name + "'");
    if (l == 0) spec.widths.push_back(w.shape[0]);
    spec.widths.push_back(w.shape[1]);
  }
  check_mlp_layout(params, spec);
  return spec;
}

void check_mlp_layout(const ParamVector& params, const MlpSpec& spec) {
  const auto& segs = params.segments();
  if (segs.size() != 2 * spec.layer_count()) throw DimensionError("MLP parameter count does not match spec");
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const ad::Shape w{spec.widths[l], spec.widths[l + 1]};
    const ad::Shape b{spec.widths[l + 1]};
    if (segs[2 * l].name != weight_name(l) || segs[2 * l].shape != w || segs[2 * l + 1].name != bias_name(l) ||
        segs[2 * l + 1].shape != b) {
      throw DimensionError("MLP layer " + std::to_string(l) + " does not match spec");
    }
  }
}

ad::Var mlp_forward(ad::Tape& tape, const ParamVector& params, const MlpSpec& spec, ad::Var x, bool trainable,
                    std::vector<ad::Var>* leaves) {
  if (x.value().rank() != 2 || x.value().cols() != spec.input_dim()) {
    throw DimensionError("network expects inputs of width " + std::to_string(spec.input_dim()) + ", got " +
                         ad::shape_string(x.value().shape()));
  }
  ad::Var h = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    ad::Var w = tape.leaf(params.segment_tensor(2 * l), trainable);
    ad::Var b = tape.leaf(params.segment_tensor(2 * l + 1), trainable);
    if (leaves) {
      leaves->push_back(w);
      leaves->push_back(b);
    }
    h = ad::bias_add(ad::matmul(h, w), b);
    if (l + 1 < spec.layer_count()) h = spec.activation == Activation::Tanh ? ad::tanh(h) : ad::relu(h);
  }
  return h;
}

ad::Tensor mlp_infer(const ParamVector& params, const MlpSpec& spec, const ad::Tensor& x) {
  if (x.rank() != 2 || x.cols() != spec.input_dim()) {
    throw DimensionError("network expects inputs of width " + std::to_string(spec.input_dim()) + ", got " +
                         ad::shape_string(x.shape()));
  }
  ad::Tensor h = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    h = ad::kernels::bias_add(ad::kernels::matmul(h, params.segment_tensor(2 * l)), params.segment_tensor(2 * l + 1));
    if (l + 1 < spec.layer_count()) h = spec.activation == Activation::Tanh ? ad::kernels::tanh(h) : ad::kernels::relu(h);
  }
  return h;
}

void accumulate_grads(const std::vector<ad::Var>& leaves, ParamVector& params) {
  if (leaves.size() != params.segments().size()) throw ContractError("leaf count does not match segments");
  auto grad = params.grad();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto& g = leaves[i].grad();
    if (!g) continue;
    const Segment& s = params.segments()[i];
    for (std::size_t j = 0; j < s.length; ++j) grad[s.offset + j] += (*g)[j];
  }
}

// ---------------------------------------------------------------------------
// Twin model

MlpSpec TwinArch::encoder() const {
  MlpSpec spec{{input_dim}, activation};
  spec.widths.insert(spec.widths.end(), encoder_hidden.begin(), encoder_hidden.end());
  spec.widths.push_back(embed_dim);
  return spec;
}

MlpSpec TwinArch::projector() const { return MlpSpec{{embed_dim, projector_hidden, proj_dim}, activation}; }

MlpSpec TwinArch::predictor() const { return MlpSpec{{proj_dim, predictor_hidden, proj_dim}, activation}; }

void TwinArch::validate() const {
  validate_spec(encoder());
  validate_spec(projector());
  validate_spec(predictor());
}

std::size_t TwinModel::online_dim() const {
  return online_encoder.total_dim() + online_projector.total_dim() + online_predictor.total_dim();
}

std::vector<double> TwinModel::online_values() const {
  std::vector<double> flat;
  flat.reserve(online_dim());
  for (const ParamVector* p : {&online_encoder, &online_projector, &online_predictor})
    flat.insert(flat.end(), p->values().begin(), p->values().end());
  return flat;
}

void TwinModel::set_online_values(std::span<const double> flat) {
  if (flat.size() != online_dim()) throw DimensionError("online parameter vector has wrong length");
  std::size_t offset = 0;
  for (ParamVector* p : {&online_encoder, &online_projector, &online_predictor}) {
    p->unflatten(flat.subspan(offset, p->total_dim()));
    offset += p->total_dim();
  }
}

std::vector<double> TwinModel::online_grad() const {
  std::vector<double> flat;
  flat.reserve(online_dim());
  for (const ParamVector* p : {&online_encoder, &online_projector, &online_predictor})
    flat.insert(flat.end(), p->grad().begin(), p->grad().end());
  return flat;
}

void TwinModel::zero_online_grad() {
  online_encoder.zero_grad();
  online_projector.zero_grad();
  online_predictor.zero_grad();
}

TwinModel init_twin(const TwinArch& arch, std::uint64_t seed, double tau) {
  arch.validate();
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  std::seed_seq seq{seed, std::uint64_t{0x6279'6f6c}};
  std::array<std::uint64_t, 3> seeds{};
  seq.generate(seeds.begin(), seeds.end());
  TwinModel model;
  model.arch = arch;
  model.tau = tau;
  model.online_encoder = init_mlp(arch.encoder(), seeds[0]);
  model.online_projector = init_mlp(arch.projector(), seeds[1]);
  model.online_predictor = init_mlp(arch.predictor(), seeds[2]);
  model.target_encoder = model.online_encoder;
  model.target_projector = model.online_projector;
  return model;
}

// ---------------------------------------------------------------------------
// Graph

TwinGraph::TwinGraph(ad::Tape& tape, const TwinModel& model) : tape_(&tape), model_(&model) {
  auto bind = [&](const ParamVector& params, bool trainable, Bound& out, std::vector<ad::Var>& all) {
    for (std::size_t i = 0; i < params.segments().size(); ++i) {
      out.leaves.push_back(tape.leaf(params.segment_tensor(i), trainable));
      all.push_back(out.leaves.back());
    }
  };
  bind(model.online_encoder, true, enc_, online_leaves_);
  bind(model.online_projector, true, proj_, online_leaves_);
  bind(model.online_predictor, true, pred_, online_leaves_);
  bind(model.target_encoder, false, tenc_, target_leaves_);
  bind(model.target_projector, false, tproj_, target_leaves_);
}

ad::Var TwinGraph::run(const Bound& bound, const MlpSpec& spec, ad::Var x) {
  if (x.value().rank() != 2 || x.value().cols() != spec.input_dim()) {
    throw DimensionError("network expects inputs of width " + std::to_string(spec.input_dim()) + ", got " +
                         ad::shape_string(x.value().shape()));
  }
  ad::Var h = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    h = ad::bias_add(ad::matmul(h, bound.leaves[2 * l]), bound.leaves[2 * l + 1]);
    if (l + 1 < spec.layer_count()) h = spec.activation == Activation::Tanh ? ad::tanh(h) : ad::relu(h);
  }
  return h;
}

ad::Var TwinGraph::online_prediction(ad::Var x) {
  const TwinArch& a = model_->arch;
  return run(pred_, a.predictor(), run(proj_, a.projector(), run(enc_, a.encoder(), x)));
}

ad::Var TwinGraph::target_projection(ad::Var x) {
  const TwinArch& a = model_->arch;
  return run(tproj_, a.projector(), run(tenc_, a.encoder(), x));
}

ad::Var TwinGraph::loss_one_direction(ad::Var view_a, ad::Var view_b) {
  if (view_a.value().rows() != view_b.value().rows()) throw DimensionError("views differ in batch size");
  if (view_a.value().rows() == 0) throw ContractError("empty batch");
  ad::Var q = ad::l2_normalize(online_prediction(view_a));
  ad::Var y = ad::l2_normalize(target_projection(view_b));
  return ad::mse(q, y);
}

ad::Var TwinGraph::loss_symmetrized(ad::Var view_a, ad::Var view_b) {
  return ad::add(loss_one_direction(view_a, view_b), loss_one_direction(view_b, view_a));
}

void TwinGraph::write_online_grads(TwinModel& model) const {
  model.zero_online_grad();
  accumulate_grads(enc_.leaves, model.online_encoder);
  accumulate_grads(proj_.leaves, model.online_projector);
  accumulate_grads(pred_.leaves, model.online_predictor);
}

double byol_loss_one_direction(const TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b) {
  ad::Tape tape;
  TwinGraph graph(tape, model);
  return graph.loss_one_direction(tape.constant(view_a), tape.constant(view_b)).value().item();
}

double byol_loss_symmetrized(const TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b) {
  ad::Tape tape;
  TwinGraph graph(tape, model);
  return graph.loss_symmetrized(tape.constant(view_a), tape.constant(view_b)).value().item();
}

double byol_loss_and_grad(TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b) {
  ad::Tape tape;
  TwinGraph graph(tape, model);
  ad::Var loss = graph.loss_symmetrized(tape.constant(view_a), tape.constant(view_b));
  tape.backward(loss);
  graph.write_online_grads(model);
  return loss.value().item();
}

double byol_loss_cosine_form(const TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b) {
  if (view_a.rows() != view_b.rows()) throw DimensionError("views differ in batch size");
  const TwinArch& a = model.arch;
  const ad::Tensor q = mlp_infer(model.online_predictor, a.predictor(),
                                 mlp_infer(model.online_projector, a.projector(),
                                           mlp_infer(model.online_encoder, a.encoder(), view_a)));
  const ad::Tensor y =
      mlp_infer(model.target_projector, a.projector(), mlp_infer(model.target_encoder, a.encoder(), view_b));
  const auto rows = cosine_loss_rows(q, y);
  double total = 0.0;
  for (double r : rows) total += r;
  return total / static_cast<double>(rows.size());
}

std::vector<double> normalized_mse_rows(const ad::Tensor& prediction, const ad::Tensor& target) {
  if (prediction.shape() != target.shape()) throw DimensionError("prediction/target shape mismatch");
  const ad::Tensor p = ad::kernels::l2_normalize(prediction);
  const ad::Tensor y = ad::kernels::l2_normalize(target);
  std::vector<double> out(p.rows());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double d = p.row(r)[c] - y.row(r)[c];
      s += d * d;
    }
    out[r] = s;
  }
  return out;
}

std::vector<double> cosine_loss_rows(const ad::Tensor& prediction, const ad::Tensor& target) {
  if (prediction.shape() != target.shape()) throw DimensionError("prediction/target shape mismatch");
  std::vector<double> out(prediction.rows());
  for (std::size_t r = 0; r < prediction.rows(); ++r) {
    const auto p = prediction.row(r);
    const auto y = target.row(r);
    double pp = 0.0, yy = 0.0, py = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      pp += p[c] * p[c];
      yy += y[c] * y[c];
      py += p[c] * y[c];
    }
    out[r] = 2.0 - 2.0 * py / (std::sqrt(pp) * std::sqrt(yy));
  }
  return out;
}

void ema_update(TwinModel& model) {
  const double tau = model.tau;
  auto blend = [tau](ParamVector& target, const ParamVector& online) {
    if (!target.same_layout(online)) throw DimensionError("target and online layouts differ");
    auto xi = target.values();
    const auto theta = online.values();
    for (std::size_t i = 0; i < xi.size(); ++i) {
      const double mixed = tau * xi[i] + (1.0 - tau) * theta[i];
      // Clamp away rounding so the result stays a convex combination.
      xi[i] = std::clamp(mixed, std::min(xi[i], theta[i]), std::max(xi[i], theta[i]));
    }
  };
  blend(model.target_encoder, model.online_encoder);
  blend(model.target_projector, model.online_projector);
}

ad::Tensor embed(const TwinModel& model, const ad::Tensor& x) {
  return mlp_infer(model.online_encoder, model.arch.encoder(), x);
}

}  // namespace bbyol
