#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fedprotip/errors.hpp"
#include "fedprotip/linalg.hpp"
#include "fedprotip/rng.hpp"

// Small dense feedforward network with per-layer activation capture, analytic
// backpropagation, and a class-incremental output head whose prior-task rows
// stay frozen. Bias terms ride along as a constant-1 input channel so that
// bias directions participate in the activation subspace.
namespace fedprotip::nn {

using linalg::Index;
using linalg::Matrix;
using linalg::Vector;

enum class Activation { relu, tanh };

struct ModelSpec {
  std::vector<Index> layer_dims;  // [d0, d1, ..., dL]; dL feeds the head
  Activation activation = Activation::relu;
  std::vector<Index> head_classes_per_task;

  Index hidden_layers() const {
    return static_cast<Index>(layer_dims.size()) - 1;
  }
  Index input_dim() const { return layer_dims.front(); }
  Index feature_dim() const { return layer_dims.back(); }

  void validate() const {
    if (layer_dims.size() < 2)
      throw InputError("ModelSpec: need at least [input_dim, feature_dim]");
    for (Index d : layer_dims)
      if (d < 1) throw InputError("ModelSpec: layer dims must be >= 1");
    for (Index c : head_classes_per_task)
      if (c < 1) throw InputError("ModelSpec: head classes must be >= 1");
  }
};

struct ModelParams {
  std::vector<Matrix> hidden_weights;  // W_l: d_l x (d_{l-1} + 1), bias last col
  Matrix head;                         // total classes so far x d_L
  std::vector<Index> head_task_offsets;  // start row of each task's block
  Activation activation = Activation::relu;

  Index hidden_layers() const {
    return static_cast<Index>(hidden_weights.size());
  }
  Index input_dim() const { return hidden_weights.front().cols() - 1; }
  Index feature_dim() const { return hidden_weights.back().rows(); }
  Index tasks_seen() const {
    return static_cast<Index>(head_task_offsets.size());
  }
  Index task_offset(Index task) const {
    if (task < 0 || task >= tasks_seen())
      throw InputError("ModelParams: unknown head task block " +
                       std::to_string(task));
    return head_task_offsets[static_cast<std::size_t>(task)];
  }
  Index task_classes(Index task) const {
    const Index end = task + 1 < tasks_seen()
                          ? head_task_offsets[static_cast<std::size_t>(task) + 1]
                          : head.rows();
    return end - task_offset(task);
  }
};

struct ForwardTrace {
  // Inputs to each hidden layer followed by the head input; the constant-1
  // bias channel is appended where consumed, not stored here.
  std::vector<Matrix> layer_inputs;
  Matrix logits;  // head rows x batch

  bool captured() const { return !layer_inputs.empty(); }
};

struct GradientSet {
  std::vector<Matrix> hidden_grads;
  Matrix head_grad;
  Index frozen_head_rows = 0;  // rows below this stay bit-identical
};

namespace detail {

inline Matrix with_bias_row(const Matrix& a) {
  Matrix out(a.rows() + 1, a.cols());
  out.topRows(a.rows()) = a;
  out.row(a.rows()).setOnes();
  return out;
}

inline Matrix apply_activation(Activation act, const Matrix& z) {
  return act == Activation::relu ? z.cwiseMax(0.0).eval()
                                 : z.array().tanh().matrix().eval();
}

// Derivative expressed through the layer output, valid for both activations.
inline Matrix activation_derivative(Activation act, const Matrix& h) {
  if (act == Activation::relu)
    return (h.array() > 0.0).cast<double>().matrix();
  return (1.0 - h.array().square()).matrix();
}

}  // namespace detail

inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams p;
  p.activation = spec.activation;
  const Index layers = spec.hidden_layers();
  p.hidden_weights.reserve(static_cast<std::size_t>(layers));
  for (Index l = 0; l < layers; ++l) {
    const Index fan_in = spec.layer_dims[static_cast<std::size_t>(l)];
    const Index fan_out = spec.layer_dims[static_cast<std::size_t>(l) + 1];
    auto eng = rng::make_engine(seed, {0x696e6974ULL, static_cast<std::uint64_t>(l)});
    Matrix w(fan_out, fan_in + 1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index j = 0; j < fan_in; ++j)
      for (Index i = 0; i < fan_out; ++i) w(i, j) = scale * rng::normal(eng);
    w.col(fan_in).setZero();
    p.hidden_weights.push_back(std::move(w));
  }
  p.head = Matrix(0, spec.feature_dim());
  return p;
}

inline ForwardTrace forward(const ModelParams& params, const Matrix& inputs,
                            bool capture) {
  if (inputs.rows() != params.input_dim())
    throw DimensionError("forward: expected " +
                         std::to_string(params.input_dim()) +
                         " input rows, got " + std::to_string(inputs.rows()));
  ForwardTrace trace;
  Matrix a = inputs;
  if (capture) trace.layer_inputs.push_back(a);
  for (const Matrix& w : params.hidden_weights) {
    a = detail::apply_activation(params.activation,
                                 w * detail::with_bias_row(a));
    if (capture) trace.layer_inputs.push_back(a);
  }
  trace.logits = params.head * a;
  return trace;
}

// Cross-entropy restricted to the active task's head rows. Gradients for head
// rows of previous tasks are identically zero; the returned GradientSet also
// records the frozen row count so the optimizer leaves them untouched.
inline std::pair<GradientSet, double> backward(
    const ModelParams& params, const ForwardTrace& trace,
    const std::vector<Index>& labels, Index active_task) {
  if (!trace.captured())
    throw StateError("backward: forward trace was not captured");
  const Index batch = trace.logits.cols();
  if (static_cast<Index>(labels.size()) != batch)
    throw InputError("backward: label count does not match batch size");
  const Index offset = params.task_offset(active_task);
  const Index classes = params.task_classes(active_task);
  for (Index lbl : labels)
    if (lbl < offset || lbl >= offset + classes)
      throw InputError("backward: label " + std::to_string(lbl) +
                       " outside active task rows [" + std::to_string(offset) +
                       ", " + std::to_string(offset + classes) + ")");

  const Matrix block = trace.logits.middleRows(offset, classes);
  Matrix delta(classes, batch);  // softmax - onehot, scaled by 1/batch
  double loss = 0.0;
  for (Index j = 0; j < batch; ++j) {
    const double zmax = block.col(j).maxCoeff();
    const Vector e = (block.col(j).array() - zmax).exp();
    const double zsum = e.sum();
    delta.col(j) = e / zsum;
    const Index y = labels[static_cast<std::size_t>(j)] - offset;
    loss += -(block(y, j) - zmax) + std::log(zsum);
    delta(y, j) -= 1.0;
  }
  loss /= static_cast<double>(batch);
  delta /= static_cast<double>(batch);

  GradientSet grads;
  grads.frozen_head_rows = offset;
  const Matrix& features = trace.layer_inputs.back();
  grads.head_grad = Matrix::Zero(params.head.rows(), params.head.cols());
  grads.head_grad.middleRows(offset, classes) = delta * features.transpose();

  const Index layers = params.hidden_layers();
  grads.hidden_grads.resize(static_cast<std::size_t>(layers));
  Matrix upstream =
      params.head.middleRows(offset, classes).transpose() * delta;
  for (Index l = layers - 1; l >= 0; --l) {
    const Matrix& out = trace.layer_inputs[static_cast<std::size_t>(l) + 1];
    const Matrix dz = upstream.cwiseProduct(
        detail::activation_derivative(params.activation, out));
    const Matrix in_aug =
        detail::with_bias_row(trace.layer_inputs[static_cast<std::size_t>(l)]);
    grads.hidden_grads[static_cast<std::size_t>(l)] = dz * in_aug.transpose();
    if (l > 0) {
      const Matrix& w = params.hidden_weights[static_cast<std::size_t>(l)];
      upstream = w.leftCols(w.cols() - 1).transpose() * dz;
    }
  }
  return {std::move(grads), loss};
}

// Appends rows for a new task's classes; existing rows are bit-unchanged.
inline ModelParams expand_head(ModelParams params, Index new_classes,
                               std::uint64_t init_seed) {
  if (new_classes < 1) throw InputError("expand_head: need >= 1 new classes");
  const Index old_rows = params.head.rows();
  params.head_task_offsets.push_back(old_rows);
  params.head.conservativeResize(old_rows + new_classes, Eigen::NoChange);
  auto eng = rng::make_engine(init_seed, {0x68656164ULL});
  for (Index j = 0; j < params.head.cols(); ++j)
    for (Index i = old_rows; i < params.head.rows(); ++i)
      params.head(i, j) = 0.01 * rng::normal(eng);
  return params;
}

// W <- W - lr (grad + weight_decay W) per block; frozen head rows are skipped
// entirely so they stay bit-identical across later tasks.
inline ModelParams sgd_step(ModelParams params, const GradientSet& grads,
                            double lr, double weight_decay) {
  if (!(lr > 0.0)) throw InputError("sgd_step: lr must be positive");
  if (weight_decay < 0.0)
    throw InputError("sgd_step: weight_decay must be non-negative");
  if (grads.hidden_grads.size() != params.hidden_weights.size())
    throw DimensionError("sgd_step: gradient block count mismatch");
  for (std::size_t l = 0; l < params.hidden_weights.size(); ++l) {
    Matrix& w = params.hidden_weights[l];
    const Matrix& g = grads.hidden_grads[l];
    if (g.rows() != w.rows() || g.cols() != w.cols())
      throw DimensionError("sgd_step: hidden gradient shape mismatch at layer " +
                           std::to_string(l));
    if (!g.allFinite())
      throw NumericalError("sgd_step: non-finite hidden gradient at layer " +
                           std::to_string(l));
    w -= lr * (g + weight_decay * w);
  }
  if (grads.head_grad.rows() != params.head.rows() ||
      grads.head_grad.cols() != params.head.cols())
    throw DimensionError("sgd_step: head gradient shape mismatch");
  if (!grads.head_grad.allFinite())
    throw NumericalError("sgd_step: non-finite head gradient");
  const Index frozen = grads.frozen_head_rows;
  const Index live = params.head.rows() - frozen;
  if (live > 0) {
    auto block = params.head.middleRows(frozen, live);
    block -= lr * (grads.head_grad.middleRows(frozen, live) +
                   weight_decay * block);
  }
  return params;
}

// --- checkpoint serialization -----------------------------------------------
// Flat binary: header (layer_dims, head_task_offsets) followed by row-major
// weight blocks, all little-endian 64-bit values.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  const std::uint64_t bits = get_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline void put_matrix_rowmajor(std::ostream& os, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_f64(os, m(i, j));
}

inline void get_matrix_rowmajor(std::istream& is, Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = get_f64(is);
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& params,
                            const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
  std::vector<Index> dims;
  dims.push_back(params.input_dim());
  for (const Matrix& w : params.hidden_weights) dims.push_back(w.rows());
  detail::put_u64(os, dims.size());
  for (Index d : dims) detail::put_u64(os, static_cast<std::uint64_t>(d));
  detail::put_u64(os, params.head_task_offsets.size());
  for (Index o : params.head_task_offsets)
    detail::put_u64(os, static_cast<std::uint64_t>(o));
  detail::put_u64(os, static_cast<std::uint64_t>(params.head.rows()));
  for (const Matrix& w : params.hidden_weights)
    detail::put_matrix_rowmajor(os, w);
  detail::put_matrix_rowmajor(os, params.head);
  if (!os) throw IoError("save_checkpoint: write failed for " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path,
                                   Activation activation) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
  const std::uint64_t ndims = detail::get_u64(is);
  if (ndims < 2 || ndims > 1024)
    throw IoError("load_checkpoint: corrupt header in " + path.string());
  std::vector<Index> dims(ndims);
  for (auto& d : dims) d = static_cast<Index>(detail::get_u64(is));
  ModelParams p;
  p.activation = activation;
  const std::uint64_t ntasks = detail::get_u64(is);
  p.head_task_offsets.resize(ntasks);
  for (auto& o : p.head_task_offsets)
    o = static_cast<Index>(detail::get_u64(is));
  const Index head_rows = static_cast<Index>(detail::get_u64(is));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Matrix w(dims[l + 1], dims[l] + 1);
    detail::get_matrix_rowmajor(is, w);
    p.hidden_weights.push_back(std::move(w));
  }
  Matrix head(head_rows, dims.back());
  detail::get_matrix_rowmajor(is, head);
  p.head = std::move(head);
  if (!is) throw IoError("load_checkpoint: truncated file " + path.string());
  return p;
}

}  // namespace fedprotip::nn
