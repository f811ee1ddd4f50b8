#include "fedbalance/nn.hpp"

#include <cmath>
#include <random>

#include "fedbalance/errors.hpp"
#include "fedbalance/rng.hpp"

namespace fedbalance {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + name + "'");
}

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Sigmoid:
      return (1.0 + (-z.array()).exp()).inverse().matrix();
    case Activation::Identity: return z;
  }
  return z;
}

// Elementwise derivative of the activation, from the pre- and post-values.
Eigen::ArrayXXd activation_slope(const Eigen::MatrixXd& pre,
                                 const Eigen::MatrixXd& post, Activation a) {
  switch (a) {
    case Activation::ReLU: return (pre.array() > 0.0).cast<double>();
    case Activation::Sigmoid: return post.array() * (1.0 - post.array());
    case Activation::Identity:
      return Eigen::ArrayXXd::Ones(pre.rows(), pre.cols());
  }
  return Eigen::ArrayXXd::Ones(pre.rows(), pre.cols());
}

}  // namespace

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

void MlpModel::validate() const {
  if (layers.empty()) throw StructuralError("model has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.bias.size() != l.weights.rows()) {
      throw StructuralError("layer " + std::to_string(k) +
                            ": bias length does not match output width");
    }
    if (k > 0 && l.in_dim() != layers[k - 1].out_dim()) {
      throw StructuralError("layer " + std::to_string(k) +
                            ": input width does not match previous output");
    }
    bool last = k + 1 == layers.size();
    if (last && l.activation != Activation::Identity) {
      throw StructuralError("output layer must be linear");
    }
    if (!last && l.activation == Activation::Identity) {
      throw ConfigError("hidden layers need a non-negative activation");
    }
  }
  if (class_count() < 2) throw ConfigError("class_count must be >= 2");
}

bool MlpModel::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

ParameterSet ParameterSet::zeros_like(const MlpModel& model) {
  ParameterSet p;
  for (const auto& l : model.layers) {
    p.weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    p.biases.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return p;
}

ParameterSet ParameterSet::of(const MlpModel& model) {
  ParameterSet p;
  for (const auto& l : model.layers) {
    p.weights.push_back(l.weights);
    p.biases.push_back(l.bias);
  }
  return p;
}

bool ParameterSet::congruent_with(const MlpModel& model) const {
  if (weights.size() != model.layers.size() || biases.size() != weights.size())
    return false;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const auto& l = model.layers[k];
    if (weights[k].rows() != l.weights.rows() ||
        weights[k].cols() != l.weights.cols() || biases[k].size() != l.bias.size())
      return false;
  }
  return true;
}

bool ParameterSet::congruent_with(const ParameterSet& other) const {
  if (weights.size() != other.weights.size() || biases.size() != other.biases.size())
    return false;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k].rows() != other.weights[k].rows() ||
        weights[k].cols() != other.weights[k].cols() ||
        biases[k].size() != other.biases[k].size())
      return false;
  }
  return true;
}

bool ParameterSet::all_finite() const {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (!weights[k].allFinite() || !biases[k].allFinite()) return false;
  }
  return true;
}

double ParameterSet::max_abs() const {
  double m = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k].size()) m = std::max(m, weights[k].cwiseAbs().maxCoeff());
    if (biases[k].size()) m = std::max(m, biases[k].cwiseAbs().maxCoeff());
  }
  return m;
}

double ParameterSet::l2_norm() const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k].squaredNorm() + biases[k].squaredNorm();
  return std::sqrt(s);
}

ParameterSet& ParameterSet::operator+=(const ParameterSet& other) {
  if (!congruent_with(other)) throw StructuralError("parameter sets differ in shape");
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] += other.weights[k];
    biases[k] += other.biases[k];
  }
  return *this;
}

ParameterSet& ParameterSet::operator*=(double s) {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] *= s;
    biases[k] *= s;
  }
  return *this;
}

MlpModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.class_count < 2) throw ConfigError("model spec: class_count must be >= 2");
  if (spec.input_dim < 1) throw ConfigError("model spec: input_dim must be >= 1");
  for (int w : spec.hidden) {
    if (w < 1) throw ConfigError("model spec: hidden widths must be >= 1");
  }
  if (spec.hidden_activation == Activation::Identity && !spec.hidden.empty()) {
    throw ConfigError("model spec: hidden activation must be non-negative");
  }

  Rng rng(seed);
  MlpModel model;
  std::vector<int> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.class_count);
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    int in = dims[k], out = dims[k + 1];
    double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer;
    layer.weights.resize(out, in);
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) layer.weights(r, c) = dist(rng);
    layer.bias = Eigen::VectorXd::Zero(out);
    layer.activation =
        k + 2 == dims.size() ? Activation::Identity : spec.hidden_activation;
    model.layers.push_back(std::move(layer));
  }
  return model;
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    double mx = logits.col(c).maxCoeff();
    Eigen::ArrayXd e = (logits.col(c).array() - mx).exp();
    out.col(c) = (e / e.sum()).matrix();
  }
  return out;
}

ForwardTrace forward(const MlpModel& model, const Eigen::MatrixXd& inputs) {
  if (model.layers.empty()) throw StructuralError("forward: empty model");
  if (inputs.rows() != model.input_dim()) {
    throw StructuralError("forward: input length " + std::to_string(inputs.rows()) +
                          " does not match model input width " +
                          std::to_string(model.input_dim()));
  }
  ForwardTrace t;
  t.pre.reserve(model.layers.size());
  t.post.reserve(model.layers.size() + 1);
  t.post.push_back(inputs);
  for (const auto& l : model.layers) {
    Eigen::MatrixXd z = l.weights * t.post.back();
    z.colwise() += l.bias;
    t.post.push_back(activate(z, l.activation));
    t.pre.push_back(std::move(z));
  }
  t.probs = softmax(t.post.back());
  return t;
}

Eigen::MatrixXd last_layer_gradient(const ForwardTrace& trace, int true_class,
                                    int column) {
  const Eigen::Index q = trace.probs.rows();
  if (true_class < 0 || true_class >= q) {
    throw IndexError("last_layer_gradient: class " + std::to_string(true_class) +
                     " outside [0, " + std::to_string(q) + ")");
  }
  if (column < 0 || column >= trace.batch_size()) {
    throw IndexError("last_layer_gradient: column out of range");
  }
  Eigen::VectorXd coeff = trace.probs.col(column);
  coeff(true_class) -= 1.0;
  return coeff * trace.hl_output().col(column).transpose();
}

GradientSet backward(const MlpModel& model, const ForwardTrace& trace,
                     const Eigen::MatrixXd& grad_logits) {
  const std::size_t depth = model.layers.size();
  if (trace.pre.size() != depth || trace.post.size() != depth + 1) {
    throw StructuralError("backward: trace was not produced by this model");
  }
  if (grad_logits.rows() != model.class_count() ||
      grad_logits.cols() != trace.batch_size()) {
    throw StructuralError("backward: loss gradient shape does not match trace");
  }
  const double n = static_cast<double>(trace.batch_size());
  GradientSet g;
  g.weights.resize(depth);
  g.biases.resize(depth);
  g.batch_size = static_cast<std::size_t>(trace.batch_size());

  Eigen::MatrixXd delta = grad_logits;
  for (std::size_t k = depth; k-- > 0;) {
    g.weights[k].noalias() = delta * trace.post[k].transpose() / n;
    g.biases[k] = delta.rowwise().sum() / n;
    if (k > 0) {
      Eigen::MatrixXd back = model.layers[k].weights.transpose() * delta;
      delta = (back.array() * activation_slope(trace.pre[k - 1], trace.post[k],
                                               model.layers[k - 1].activation))
                  .matrix();
    }
  }
  return g;
}

void sgd_step(MlpModel& model, const GradientSet& grads, double learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("sgd_step: learning rate must be finite and >= 0");
  }
  if (!grads.congruent_with(model)) throw StructuralError("sgd_step: gradient shape mismatch");
  if (!grads.all_finite()) throw NumericError("sgd_step: non-finite gradient");
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    model.layers[k].weights -= learning_rate * grads.weights[k];
    model.layers[k].bias -= learning_rate * grads.biases[k];
  }
}

void apply_delta(MlpModel& model, const ParameterSet& delta, double scale) {
  if (!delta.congruent_with(model)) throw StructuralError("apply_delta: shape mismatch");
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    model.layers[k].weights += scale * delta.weights[k];
    model.layers[k].bias += scale * delta.biases[k];
  }
}

ParameterSet difference(const MlpModel& a, const MlpModel& b) {
  ParameterSet pa = ParameterSet::of(a);
  if (!pa.congruent_with(b)) throw StructuralError("difference: models differ in shape");
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    pa.weights[k] -= b.layers[k].weights;
    pa.biases[k] -= b.layers[k].bias;
  }
  return pa;
}

std::vector<double> flatten(const MlpModel& model) {
  std::vector<double> out;
  out.reserve(model.parameter_count());
  for (const auto& l : model.layers) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) out.push_back(l.weights(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
  }
  return out;
}

void unflatten(MlpModel& model, std::span<const double> values) {
  if (values.size() != model.parameter_count()) {
    throw StructuralError("unflatten: expected " + std::to_string(model.parameter_count()) +
                          " values, got " + std::to_string(values.size()));
  }
  std::size_t i = 0;
  for (auto& l : model.layers) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = values[i++];
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = values[i++];
  }
}

}  // namespace fedbalance
