#pragma once

#include <vector>

#include "fepr/nn/tape.hpp"

// Differentiable operations recorded on a Tape. Image tensors are NCHW, matrices are
// (rows, cols). Convolutions never pad. All ops are instantiated for float and double.
namespace fepr::nn {

// Running statistics kept by a batch-normalization layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(int channels = 1)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

inline int conv_output_size(int input, int kernel, int stride) { return (input - kernel) / stride + 1; }
inline int deconv_output_size(int input, int kernel, int stride) { return (input - 1) * stride + kernel; }

// Elementwise; operands must have identical shapes.
template <typename T> Var add(Tape<T>& tape, Var a, Var b);
template <typename T> Var sub(Tape<T>& tape, Var a, Var b);
template <typename T> Var mul(Tape<T>& tape, Var a, Var b);

template <typename T> Var scale(Tape<T>& tape, Var x, T factor);
template <typename T> Var add_scalar(Tape<T>& tape, Var x, T offset);
template <typename T> Var square(Tape<T>& tape, Var x);
template <typename T> Var exp(Tape<T>& tape, Var x);
template <typename T> Var log(Tape<T>& tape, Var x);
// Gradient passes only where lo <= x <= hi.
template <typename T> Var clamp(Tape<T>& tape, Var x, T lo, T hi);

template <typename T> Var relu(Tape<T>& tape, Var x);
template <typename T> Var sigmoid(Tape<T>& tape, Var x);
// Row-wise softmax of a (rows, cols) matrix.
template <typename T> Var softmax(Tape<T>& tape, Var x);

template <typename T> Var sum(Tape<T>& tape, Var x);
template <typename T> Var mean(Tape<T>& tape, Var x);
// (B, L) -> (B)
template <typename T> Var sum_rows(Tape<T>& tape, Var x);

template <typename T> Var reshape(Tape<T>& tape, Var x, Shape shape);
// Concatenates (rows, c_i) matrices along columns.
template <typename T> Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts);
// out[r] = x[r, index[r]] for a (rows, cols) matrix; output shape {rows}.
template <typename T> Var gather_cols(Tape<T>& tape, Var x, const std::vector<int>& index);
// Copies the value as a constant; no gradient flows back.
template <typename T> Var stop_gradient(Tape<T>& tape, Var x);

// x: (B, in), weight: (out, in), bias: (out) -> (B, out)
template <typename T> Var dense(Tape<T>& tape, Var x, Var weight, Var bias);
// x: (B, Cin, H, W), weight: (Cout, Cin, k, k), bias: (Cout)
template <typename T> Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride);
// x: (B, Cin, H, W), weight: (Cin, Cout, k, k), bias: (Cout); output side (H - 1) * stride + k
template <typename T> Var deconv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride);
template <typename T> Var maxpool2d(Tape<T>& tape, Var x, int kernel, int stride);
// Per-channel normalization over (N, H, W). In training mode the running statistics are
// updated in place; in evaluation mode they are used instead of batch statistics.
template <typename T>
Var batchnorm2d(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormStats<T>& stats,
                const BatchNormOptions& options);

}  // namespace fepr::nn
