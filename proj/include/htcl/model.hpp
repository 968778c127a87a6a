// Dense feed-forward model over a flat parameter vector.
//
// Parameters are stored layer by layer: the weight matrix of a layer
// (out x in, row-major) followed by its bias (out). Hidden layers use the
// configured activation; the output layer is linear. Classification uses
// softmax cross-entropy, regression the mean squared error of a single
// output unit.
#ifndef HTCL_MODEL_HPP
#define HTCL_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace htcl {

using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { tanh, relu };
enum class TaskKind { classification, regression };

struct ModelSpec {
  std::vector<int> layer_widths;
  Activation activation = Activation::tanh;
  TaskKind task_kind = TaskKind::classification;

  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }

  void validate() const {
    if (layer_widths.size() < 2)
      throw std::invalid_argument("ModelSpec: at least two layers required");
    for (int w : layer_widths)
      if (w <= 0) throw std::invalid_argument("ModelSpec: layer widths must be positive");
    if (task_kind == TaskKind::regression && output_dim() != 1)
      throw std::invalid_argument("ModelSpec: regression requires a single output unit");
  }

  std::size_t param_count() const {
    std::size_t p = 0;
    for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l)
      p += static_cast<std::size_t>(layer_widths[l]) * layer_widths[l + 1] + layer_widths[l + 1];
    return p;
  }
};

/// A set of samples. Rows of `inputs` are samples. Classification batches
/// fill `labels`, regression batches fill `values`.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  Eigen::VectorXd values;

  Eigen::Index size() const { return inputs.rows(); }
  bool empty() const { return inputs.rows() == 0; }
};

/// Stacks batches in the given order. All parts must share input width and kind.
inline Batch concat_batches(const std::vector<const Batch*>& parts) {
  Batch out;
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  bool regression = false;
  for (const Batch* b : parts) {
    if (b->empty()) continue;
    if (cols >= 0 && b->inputs.cols() != cols) throw std::invalid_argument("concat_batches: width mismatch");
    cols = b->inputs.cols();
    regression = regression || b->values.size() > 0;
    rows += b->size();
  }
  if (cols < 0) return out;
  out.inputs.resize(rows, cols);
  if (regression) out.values.resize(rows);
  Eigen::Index at = 0;
  for (const Batch* b : parts) {
    if (b->empty()) continue;
    out.inputs.middleRows(at, b->size()) = b->inputs;
    if (regression)
      out.values.segment(at, b->size()) = b->values;
    else
      out.labels.insert(out.labels.end(), b->labels.begin(), b->labels.end());
    at += b->size();
  }
  return out;
}

/// Rows `idx` of a batch, in that order.
inline Batch select_rows(const Batch& src, const std::vector<Eigen::Index>& idx) {
  Batch out;
  out.inputs.resize(static_cast<Eigen::Index>(idx.size()), src.inputs.cols());
  const bool regression = src.values.size() > 0;
  if (regression) out.values.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.inputs.row(static_cast<Eigen::Index>(r)) = src.inputs.row(idx[r]);
    if (regression)
      out.values(static_cast<Eigen::Index>(r)) = src.values(idx[r]);
    else
      out.labels.push_back(src.labels[static_cast<std::size_t>(idx[r])]);
  }
  return out;
}

namespace detail {

inline void check_batch(const Batch& batch, const ModelSpec& spec) {
  if (batch.inputs.cols() != spec.input_dim())
    throw std::invalid_argument("batch input dimension does not match model spec");
  if (spec.task_kind == TaskKind::classification) {
    if (static_cast<Eigen::Index>(batch.labels.size()) != batch.size())
      throw std::invalid_argument("batch label count does not match sample count");
    for (int y : batch.labels)
      if (y < 0 || y >= spec.output_dim())
        throw std::invalid_argument("batch label outside the output space");
  } else if (batch.values.size() != batch.size()) {
    throw std::invalid_argument("batch target count does not match sample count");
  }
}

inline void check_params(const ParamVector& params, const ModelSpec& spec) {
  if (static_cast<std::size_t>(params.size()) != spec.param_count())
    throw std::invalid_argument("parameter vector length does not match model spec");
}

struct LayerView {
  Eigen::Map<const RowMatrix> weight;
  Eigen::Map<const Eigen::VectorXd> bias;
};

inline std::vector<LayerView> layer_views(const ParamVector& params, const ModelSpec& spec) {
  std::vector<LayerView> views;
  const double* cursor = params.data();
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    Eigen::Map<const RowMatrix> weight(cursor, out, in);
    cursor += static_cast<std::ptrdiff_t>(in) * out;
    Eigen::Map<const Eigen::VectorXd> bias(cursor, out);
    cursor += out;
    views.push_back({weight, bias});
  }
  return views;
}

inline void activate(Matrix& z, Activation act) {
  if (act == Activation::tanh)
    z = z.array().tanh().matrix();
  else
    z = z.cwiseMax(0.0);
}

// Derivative of the activation expressed through its output.
inline Matrix activation_slope(const Matrix& a, Activation act) {
  if (act == Activation::tanh) return (1.0 - a.array().square()).matrix();
  return (a.array() > 0.0).cast<double>().matrix();
}

struct ForwardPass {
  std::vector<Matrix> activations;  // activations[0] = inputs, back() = outputs
};

inline ForwardPass forward(const ParamVector& params, const Matrix& inputs, const ModelSpec& spec) {
  auto layers = layer_views(params, spec);
  ForwardPass pass;
  pass.activations.reserve(layers.size() + 1);
  pass.activations.push_back(inputs);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = pass.activations.back() * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    if (l + 1 < layers.size()) activate(z, spec.activation);
    pass.activations.push_back(std::move(z));
  }
  return pass;
}

// Row-wise softmax, numerically stabilized.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix probs = logits;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double m = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - m).exp().matrix();
    probs.row(i) /= probs.row(i).sum();
  }
  return probs;
}

// Per-sample loss values and dL/d(output) for each sample (unaveraged).
inline std::pair<Eigen::VectorXd, Matrix> output_loss(const Matrix& outputs, const Batch& batch,
                                                      const ModelSpec& spec) {
  const Eigen::Index n = outputs.rows();
  Eigen::VectorXd losses(n);
  Matrix delta(n, outputs.cols());
  if (spec.task_kind == TaskKind::classification) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto row = outputs.row(i);
      const double m = row.maxCoeff();
      const double log_sum = m + std::log((row.array() - m).exp().sum());
      const int y = batch.labels[static_cast<std::size_t>(i)];
      losses(i) = log_sum - row(y);
      delta.row(i) = (row.array() - log_sum).exp().matrix();
      delta(i, y) -= 1.0;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = outputs(i, 0) - batch.values(i);
      losses(i) = r * r;
      delta(i, 0) = 2.0 * r;
    }
  }
  return {losses, delta};
}

// Backpropagates per-sample output deltas (already scaled) and accumulates
// the summed gradient into `grad`.
inline void backward(const ParamVector& params, const ForwardPass& pass, Matrix delta,
                     const ModelSpec& spec, ParamVector& grad) {
  auto layers = layer_views(params, spec);
  // Offsets of each layer's block inside the flat vector.
  std::vector<std::ptrdiff_t> offsets(layers.size());
  std::ptrdiff_t off = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    offsets[l] = off;
    off += layers[l].weight.size() + layers[l].bias.size();
  }
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix& input = pass.activations[l];
    const int out = static_cast<int>(layers[l].weight.rows());
    const int in = static_cast<int>(layers[l].weight.cols());
    Eigen::Map<RowMatrix> gw(grad.data() + offsets[l], out, in);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + offsets[l] + static_cast<std::ptrdiff_t>(out) * in, out);
    gw.noalias() += delta.transpose() * input;
    gb.noalias() += delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix upstream = delta * layers[l].weight;
      delta = upstream.cwiseProduct(activation_slope(input, spec.activation));
    }
  }
}

}  // namespace detail

/// Zero-mean uniform initialization scaled by 1/sqrt(fan_in); biases start
/// at zero. Pure function of (spec, seed).
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector params = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  std::mt19937_64 rng(seed);
  Eigen::Index cursor = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_widths.size(); ++l) {
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int i = 0; i < in * out; ++i) params(cursor++) = dist(rng);
    cursor += out;
  }
  return params;
}

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean loss over the batch and its gradient.
inline LossGrad loss_and_grad(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  detail::check_params(params, spec);
  detail::check_batch(batch, spec);
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  const auto pass = detail::forward(params, batch.inputs, spec);
  auto [losses, delta] = detail::output_loss(pass.activations.back(), batch, spec);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossGrad out;
  out.loss = losses.sum() * inv_n;
  out.grad = ParamVector::Zero(params.size());
  delta *= inv_n;
  detail::backward(params, pass, std::move(delta), spec, out.grad);
  return out;
}

inline double loss_value(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  detail::check_params(params, spec);
  detail::check_batch(batch, spec);
  if (batch.empty()) throw std::invalid_argument("loss_value: empty batch");
  const auto pass = detail::forward(params, batch.inputs, spec);
  return detail::output_loss(pass.activations.back(), batch, spec).first.mean();
}

/// Per-sample gradients, one row per sample (n x p).
inline Matrix per_sample_grads(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  detail::check_params(params, spec);
  detail::check_batch(batch, spec);
  const auto pass = detail::forward(params, batch.inputs, spec);
  auto [losses, delta] = detail::output_loss(pass.activations.back(), batch, spec);
  (void)losses;
  const auto layers = detail::layer_views(params, spec);
  Matrix grads = Matrix::Zero(batch.size(), params.size());
  ParamVector row(params.size());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    detail::ForwardPass single;
    single.activations.reserve(pass.activations.size());
    for (const auto& a : pass.activations) single.activations.push_back(a.row(i));
    row.setZero();
    detail::backward(params, single, delta.row(i), spec, row);
    grads.row(i) = row.transpose();
  }
  return grads;
}

inline Matrix predict(const ParamVector& params, const Matrix& inputs, const ModelSpec& spec) {
  detail::check_params(params, spec);
  return detail::forward(params, inputs, spec).activations.back();
}

/// Fraction of argmax-correct predictions for classification; 1/(1+MSE)
/// for regression. Always in [0, 1].
inline double accuracy_eval(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  detail::check_params(params, spec);
  detail::check_batch(batch, spec);
  if (batch.empty()) throw std::invalid_argument("accuracy_eval: empty batch");
  const Matrix out = predict(params, batch.inputs, spec);
  if (spec.task_kind == TaskKind::classification) {
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      Eigen::Index arg = 0;
      out.row(i).maxCoeff(&arg);
      if (arg == batch.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(out.rows());
  }
  const double mse = (out.col(0) - batch.values).squaredNorm() / static_cast<double>(out.rows());
  return 1.0 / (1.0 + mse);
}

inline constexpr std::size_t kMaxOracleParams = 200;

/// Central-difference Hessian of a function given through its gradient,
/// symmetrized. Step per coordinate is rel_step * (1 + |w_i|).
inline Matrix finite_diff_hessian(const std::function<ParamVector(const ParamVector&)>& gradient,
                                  const ParamVector& params, double rel_step = 1e-4) {
  if (rel_step <= 0.0) throw std::invalid_argument("finite_diff_hessian: step must be positive");
  const Eigen::Index p = params.size();
  if (static_cast<std::size_t>(p) > kMaxOracleParams)
    throw std::invalid_argument("finite_diff_hessian: parameter count exceeds oracle limit");
  Matrix hess(p, p);
  ParamVector probe = params;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double h = rel_step * (1.0 + std::abs(params(i)));
    probe(i) = params(i) + h;
    const ParamVector plus = gradient(probe);
    probe(i) = params(i) - h;
    const ParamVector minus = gradient(probe);
    probe(i) = params(i);
    hess.col(i) = (plus - minus) / (2.0 * h);
  }
  Matrix sym = 0.5 * (hess + hess.transpose());
  return sym;
}

inline Matrix finite_diff_hessian(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                                  double rel_step = 1e-4) {
  detail::check_params(params, spec);
  return finite_diff_hessian(
      [&](const ParamVector& w) { return loss_and_grad(w, batch, spec).grad; }, params, rel_step);
}

}  // namespace htcl

#endif  // HTCL_MODEL_HPP
