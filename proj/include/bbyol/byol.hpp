#pragma once

// Twin-network BYOL model: online encoder/projector/predictor, target
// encoder/projector, the normalized-MSE objective and the EMA target update.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbyol/autodiff.hpp"

namespace bbyol {

/// Contiguous slice of a ParamVector holding one named tensor.
struct Segment {
  std::string name;
  ad::Shape shape;
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Flat, named parameter storage for one network component with a paired gradient buffer.
class ParamVector {
 public:
  void add_segment(std::string name, ad::Shape shape);
  void add_segment(std::string name, ad::Shape shape, std::span<const double> values);

  const std::vector<Segment>& segments() const noexcept { return segments_; }
  const Segment& segment(std::string_view name) const;
  std::size_t total_dim() const noexcept { return values_.size(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> segment_values(std::size_t index) const;
  std::span<double> segment_values(std::size_t index);
  ad::Tensor segment_tensor(std::size_t index) const;

  std::span<const double> grad() const noexcept { return grad_; }
  std::span<double> grad() noexcept { return grad_; }
  void zero_grad();

  std::vector<double> flatten() const { return values_; }
  void unflatten(std::span<const double> flat);

  /// Same segment names, shapes and order.
  bool same_layout(const ParamVector& other) const;
  bool operator==(const ParamVector& other) const { return same_layout(other) && values_ == other.values_; }

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

enum class Activation { Tanh, Relu };

Activation parse_activation(std::string_view name);
const char* activation_name(Activation act);

/// Dense network with widths[0] inputs and widths.back() outputs; the activation
/// follows every layer except the last.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation activation = Activation::Tanh;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
};

/// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ParamVector init_mlp(const MlpSpec& spec, std::uint64_t seed);
/// Recovers layer widths from the "layer<i>.weight" segment shapes.
MlpSpec mlp_spec_from_params(const ParamVector& params, Activation activation);
void check_mlp_layout(const ParamVector& params, const MlpSpec& spec);

/// Records the network on a tape. Leaves are appended to `leaves` in segment order.
ad::Var mlp_forward(ad::Tape& tape, const ParamVector& params, const MlpSpec& spec, ad::Var x,
                    bool trainable, std::vector<ad::Var>* leaves = nullptr);
/// Same arithmetic as mlp_forward without recording.
ad::Tensor mlp_infer(const ParamVector& params, const MlpSpec& spec, const ad::Tensor& x);
/// Adds the tape gradients of `leaves` into the gradient buffer of `params`.
void accumulate_grads(const std::vector<ad::Var>& leaves, ParamVector& params);

struct TwinArch {
  std::size_t input_dim = 8;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::size_t embed_dim = 16;
  std::size_t projector_hidden = 32;
  std::size_t proj_dim = 8;
  std::size_t predictor_hidden = 32;
  Activation activation = Activation::Tanh;

  MlpSpec encoder() const;
  MlpSpec projector() const;
  MlpSpec predictor() const;
  void validate() const;
};

struct TwinModel {
  TwinArch arch;
  double tau = 0.99;
  ParamVector online_encoder;
  ParamVector online_projector;
  ParamVector online_predictor;
  ParamVector target_encoder;
  ParamVector target_projector;

  /// Total count of online parameters (encoder, projector, predictor).
  std::size_t online_dim() const;
  /// Online parameters concatenated as encoder | projector | predictor.
  std::vector<double> online_values() const;
  void set_online_values(std::span<const double> flat);
  /// Online gradient buffers, same layout as online_values().
  std::vector<double> online_grad() const;
  void zero_online_grad();
};

/// Target network starts as an exact copy of the online encoder/projector.
TwinModel init_twin(const TwinArch& arch, std::uint64_t seed, double tau = 0.99);

/// One forward pass of a TwinModel on a tape. Target parameters enter as
/// constants, so backward never reaches them.
class TwinGraph {
 public:
  TwinGraph(ad::Tape& tape, const TwinModel& model);

  /// f(g(phi(x))) through the online network.
  ad::Var online_prediction(ad::Var x);
  /// g(phi(x)) through the target network.
  ad::Var target_projection(ad::Var x);
  /// Mean over rows of ||normalize(q) - normalize(y)||^2 with q from view_a, y from view_b.
  ad::Var loss_one_direction(ad::Var view_a, ad::Var view_b);
  ad::Var loss_symmetrized(ad::Var view_a, ad::Var view_b);

  void write_online_grads(TwinModel& model) const;
  const std::vector<ad::Var>& target_leaves() const { return target_leaves_; }
  const std::vector<ad::Var>& online_leaves() const { return online_leaves_; }

 private:
  struct Bound {
    std::vector<ad::Var> leaves;
  };
  ad::Var run(const Bound& bound, const MlpSpec& spec, ad::Var x);

  ad::Tape* tape_;
  const TwinModel* model_;
  Bound enc_, proj_, pred_, tenc_, tproj_;
  std::vector<ad::Var> online_leaves_;
  std::vector<ad::Var> target_leaves_;
};

double byol_loss_one_direction(const TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b);
double byol_loss_symmetrized(const TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b);
/// Symmetrized loss; overwrites the online gradient buffers with its gradient.
double byol_loss_and_grad(TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b);
/// Closed form 2 - 2 cos(q, y), averaged over rows, computed without a tape.
double byol_loss_cosine_form(const TwinModel& model, const ad::Tensor& view_a, const ad::Tensor& view_b);

/// Per-row ||normalize(p) - normalize(y)||^2.
std::vector<double> normalized_mse_rows(const ad::Tensor& prediction, const ad::Tensor& target);
/// Per-row 2 - 2 <p, y> / (||p|| ||y||).
std::vector<double> cosine_loss_rows(const ad::Tensor& prediction, const ad::Tensor& target);

/// xi <- tau*xi + (1-tau)*theta on encoder and projector.
void ema_update(TwinModel& model);

/// Online encoder output phi(x), no tape.
ad::Tensor embed(const TwinModel& model, const ad::Tensor& x);

}  // namespace bbyol
