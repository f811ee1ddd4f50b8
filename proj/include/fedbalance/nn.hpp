#pragma once

// Feed-forward softmax classifier with analytic backpropagation.
//
// Samples are stored column-wise: a batch of n inputs is a d x n matrix.
// The final layer is always linear; its Q x s weight matrix W links the
// last hidden representation Y (length s) to the Q logits.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedbalance {

enum class Activation { ReLU, Sigmoid, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
  Activation activation = Activation::Identity;

  int in_dim() const { return static_cast<int>(weights.cols()); }
  int out_dim() const { return static_cast<int>(weights.rows()); }
};

struct ModelSpec {
  int input_dim = 0;
  std::vector<int> hidden;  // widths of the hidden layers, may be empty
  Activation hidden_activation = Activation::ReLU;
  int class_count = 0;
};

struct MlpModel {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.front().in_dim(); }
  int class_count() const { return layers.back().out_dim(); }
  // Width s of the representation feeding the output layer.
  int hidden_width() const { return layers.back().in_dim(); }
  const Eigen::MatrixXd& output_weights() const { return layers.back().weights; }
  std::size_t parameter_count() const;

  // Throws StructuralError/ConfigError when the layer chain is inconsistent,
  // the output layer is not linear, or a hidden activation can go negative.
  void validate() const;
  bool all_finite() const;
};

// Intermediates of one forward pass over n samples.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> pre;   // pre[k]: layer k pre-activation, out_k x n
  std::vector<Eigen::MatrixXd> post;  // post[0]: input, post[k+1]: layer k output
  Eigen::MatrixXd probs;              // Q x n

  int batch_size() const { return static_cast<int>(probs.cols()); }
  const Eigen::MatrixXd& input() const { return post.front(); }
  const Eigen::MatrixXd& hl_output() const { return post[post.size() - 2]; }
  const Eigen::MatrixXd& logits() const { return post.back(); }
};

// Model-shaped collection of tensors (parameters, deltas, gradients).
struct ParameterSet {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static ParameterSet zeros_like(const MlpModel& model);
  static ParameterSet of(const MlpModel& model);

  bool congruent_with(const MlpModel& model) const;
  bool congruent_with(const ParameterSet& other) const;
  bool all_finite() const;
  double max_abs() const;
  double l2_norm() const;  // over every weight and bias

  ParameterSet& operator+=(const ParameterSet& other);
  ParameterSet& operator*=(double s);
};

struct GradientSet : ParameterSet {
  std::size_t batch_size = 0;
};

MlpModel init_model(const ModelSpec& spec, std::uint64_t seed);

// Column-wise softmax with max-logit subtraction.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

ForwardTrace forward(const MlpModel& model, const Eigen::MatrixXd& inputs);

// Cross-entropy gradient of the output weights W for one column of the
// trace: row p gets (f_p - 1) * Y, every other row m gets f_m * Y.
Eigen::MatrixXd last_layer_gradient(const ForwardTrace& trace, int true_class,
                                    int column = 0);

// Chain rule through every layer. grad_logits holds dLoss_i/dz_i per column;
// the returned gradients are averaged over the batch.
GradientSet backward(const MlpModel& model, const ForwardTrace& trace,
                     const Eigen::MatrixXd& grad_logits);

// In-place SGD: every parameter -= learning_rate * gradient.
void sgd_step(MlpModel& model, const GradientSet& grads, double learning_rate);

// model += scale * delta
void apply_delta(MlpModel& model, const ParameterSet& delta, double scale = 1.0);
// a - b, parameter-wise.
ParameterSet difference(const MlpModel& a, const MlpModel& b);

std::vector<double> flatten(const MlpModel& model);
void unflatten(MlpModel& model, std::span<const double> values);

// Snapshot formats. The binary form round-trips bit-exactly.
void save_binary(const MlpModel& model, std::ostream& out);
MlpModel load_binary(std::istream& in);
std::string to_json(const MlpModel& model);
MlpModel from_json(const std::string& text);

}  // namespace fedbalance
