#include "fepr/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <sstream>

namespace fepr::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ')';
  return out.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

template <typename T>
void require_same_shape(const Tape<T>& tape, Var a, Var b, const char* op) {
  if (tape.shape(a) != tape.shape(b)) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(tape.shape(a)) + " vs " +
                      shape_string(tape.shape(b)));
  }
}

// Unfolds every k x k window of one (C, H, W) image into a column of a (C*k*k, Ho*Wo) matrix.
template <typename T>
void im2col(const T* image, int channels, int height, int width, int kernel, int stride, T* cols) {
  const int out_h = conv_output_size(height, kernel, stride);
  const int out_w = conv_output_size(width, kernel, stride);
  const std::size_t positions = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        T* row = cols + ((static_cast<std::size_t>(c) * kernel + ki) * kernel + kj) * positions;
        for (int oh = 0; oh < out_h; ++oh) {
          const T* src = image + (static_cast<std::size_t>(c) * height + oh * stride + ki) * width + kj;
          T* dst = row + static_cast<std::size_t>(oh) * out_w;
          for (int ow = 0; ow < out_w; ++ow) dst[ow] = src[ow * stride];
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back onto a (C, H, W) image.
template <typename T>
void col2im(const T* cols, int channels, int height, int width, int kernel, int stride, T* image) {
  const int out_h = conv_output_size(height, kernel, stride);
  const int out_w = conv_output_size(width, kernel, stride);
  const std::size_t positions = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < kernel; ++ki) {
      for (int kj = 0; kj < kernel; ++kj) {
        const T* row = cols + ((static_cast<std::size_t>(c) * kernel + ki) * kernel + kj) * positions;
        for (int oh = 0; oh < out_h; ++oh) {
          T* dst = image + (static_cast<std::size_t>(c) * height + oh * stride + ki) * width + kj;
          const T* src = row + static_cast<std::size_t>(oh) * out_w;
          for (int ow = 0; ow < out_w; ++ow) dst[ow * stride] += src[ow];
        }
      }
    }
  }
}

template <typename T, typename F, typename G>
Var unary(Tape<T>& tape, Var x, F forward, G derivative) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return tape.record(std::move(out), {x}, [derivative](const typename Tape<T>::BackwardContext& ctx) {
    Tensor<T>* gx = ctx.grad_in(0);
    if (gx == nullptr) return;
    const Tensor<T>& in = ctx.in(0);
    for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += ctx.grad[i] * derivative(in[i], ctx.out[i]);
  });
}

}  // namespace

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "add");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a, b}, [](const typename Tape<T>::BackwardContext& ctx) {
    for (int k = 0; k < 2; ++k) {
      if (Tensor<T>* g = ctx.grad_in(k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.grad[i];
      }
    }
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "sub");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return tape.record(std::move(out), {a, b}, [](const typename Tape<T>::BackwardContext& ctx) {
    if (Tensor<T>* g = ctx.grad_in(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.grad[i];
    }
    if (Tensor<T>* g = ctx.grad_in(1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= ctx.grad[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "mul");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a, b}, [](const typename Tape<T>::BackwardContext& ctx) {
    const Tensor<T>& x = ctx.in(0);
    const Tensor<T>& y = ctx.in(1);
    if (Tensor<T>* g = ctx.grad_in(0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.grad[i] * y[i];
    }
    if (Tensor<T>* g = ctx.grad_in(1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.grad[i] * x[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  return unary(
      tape, x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var add_scalar(Tape<T>& tape, Var x, T offset) {
  return unary(
      tape, x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Var square(Tape<T>& tape, Var x) {
  return unary(
      tape, x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var exp(Tape<T>& tape, Var x) {
  return unary(
      tape, x, [](T v) { return std::exp(v); }, [](T, T out) { return out; });
}

template <typename T>
Var log(Tape<T>& tape, Var x) {
  return unary(
      tape, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var clamp(Tape<T>& tape, Var x, T lo, T hi) {
  return unary(
      tape, x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  return unary(
      tape, x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  return unary(
      tape, x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T out) { return out * (T(1) - out); });
}

template <typename T>
Var softmax(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  require(in.rank() == 2, "softmax expects a (rows, cols) matrix, got " + shape_string(in.shape()));
  const int rows = in.dim(0);
  const int cols = in.dim(1);
  Tensor<T> out(in.shape());
  for (int r = 0; r < rows; ++r) {
    const T* src = in.data() + static_cast<std::size_t>(r) * cols;
    T* dst = out.data() + static_cast<std::size_t>(r) * cols;
    const T peak = *std::max_element(src, src + cols);
    T total = 0;
    for (int c = 0; c < cols; ++c) {
      dst[c] = std::exp(src[c] - peak);
      total += dst[c];
    }
    for (int c = 0; c < cols; ++c) dst[c] /= total;
  }
  return tape.record(std::move(out), {x}, [rows, cols](const typename Tape<T>::BackwardContext& ctx) {
    Tensor<T>* gx = ctx.grad_in(0);
    if (gx == nullptr) return;
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      T dot = 0;
      for (int c = 0; c < cols; ++c) dot += ctx.grad[base + c] * ctx.out[base + c];
      for (int c = 0; c < cols; ++c) (*gx)[base + c] += ctx.out[base + c] * (ctx.grad[base + c] - dot);
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  double total = 0;  // float accumulation drifts visibly over a full image stack
  for (T v : in.values()) total += v;
  return tape.record(Tensor<T>::scalar(static_cast<T>(total)), {x}, [](const typename Tape<T>::BackwardContext& ctx) {
    if (Tensor<T>* gx = ctx.grad_in(0)) {
      const T g = ctx.grad[0];
      for (T& v : gx->values()) v += g;
    }
  });
}

template <typename T>
Var sum_rows(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  require(in.rank() == 2, "sum_rows expects a matrix");
  const int rows = in.dim(0);
  const int cols = in.dim(1);
  Tensor<T> out(Shape{rows});
  for (int r = 0; r < rows; ++r) {
    double acc = 0;
    for (int c = 0; c < cols; ++c) acc += in[static_cast<std::size_t>(r) * cols + c];
    out[static_cast<std::size_t>(r)] = static_cast<T>(acc);
  }
  return tape.record(std::move(out), {x}, [cols](const typename Tape<T>::BackwardContext& ctx) {
    if (Tensor<T>* gx = ctx.grad_in(0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.grad[i / static_cast<std::size_t>(cols)];
    }
  });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  const T count = static_cast<T>(tape.value(x).size());
  return scale(tape, sum(tape, x), T(1) / count);
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [](const typename Tape<T>::BackwardContext& ctx) {
    if (Tensor<T>* gx = ctx.grad_in(0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.grad[i];
    }
  });
}

template <typename T>
Var concat_cols(Tape<T>& tape, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols needs at least one input");
  const int rows = tape.value(parts.front()).dim(0);
  std::vector<int> widths;
  int total = 0;
  for (Var p : parts) {
    const Tensor<T>& v = tape.value(p);
    require(v.rank() == 2 && v.dim(0) == rows, "concat_cols: inputs must be matrices with equal rows");
    widths.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor<T> out(Shape{rows, total});
  int offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = tape.value(parts[k]);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(v.data() + static_cast<std::size_t>(r) * widths[k], widths[k],
                  out.data() + static_cast<std::size_t>(r) * total + offset);
    }
    offset += widths[k];
  }
  return tape.record(std::move(out), parts, [rows, total, widths](const typename Tape<T>::BackwardContext& ctx) {
    int offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Tensor<T>* g = ctx.grad_in(static_cast<int>(k))) {
        for (int r = 0; r < rows; ++r) {
          const T* src = ctx.grad.data() + static_cast<std::size_t>(r) * total + offset;
          T* dst = g->data() + static_cast<std::size_t>(r) * widths[k];
          for (int c = 0; c < widths[k]; ++c) dst[c] += src[c];
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Var gather_cols(Tape<T>& tape, Var x, const std::vector<int>& index) {
  const Tensor<T>& in = tape.value(x);
  require(in.rank() == 2, "gather_cols expects a matrix");
  const int rows = in.dim(0);
  const int cols = in.dim(1);
  require(static_cast<int>(index.size()) == rows, "gather_cols: one index per row required");
  Tensor<T> out(Shape{rows});
  for (int r = 0; r < rows; ++r) {
    const int c = index[static_cast<std::size_t>(r)];
    if (c < 0 || c >= cols) throw std::invalid_argument("gather_cols: column index out of range");
    out[static_cast<std::size_t>(r)] = in[static_cast<std::size_t>(r) * cols + c];
  }
  return tape.record(std::move(out), {x}, [index, cols](const typename Tape<T>::BackwardContext& ctx) {
    if (Tensor<T>* gx = ctx.grad_in(0)) {
      for (std::size_t r = 0; r < index.size(); ++r) {
        (*gx)[r * static_cast<std::size_t>(cols) + index[r]] += ctx.grad[r];
      }
    }
  });
}

template <typename T>
Var stop_gradient(Tape<T>& tape, Var x) {
  return tape.constant(tape.value(x));
}

template <typename T>
Var dense(Tape<T>& tape, Var x, Var weight, Var bias) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& w = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require(in.rank() == 2 && w.rank() == 2 && b.rank() == 1,
          "dense: expected x (B, in), weight (out, in), bias (out)");
  const int batch = in.dim(0);
  const int in_features = in.dim(1);
  const int out_features = w.dim(0);
  require(w.dim(1) == in_features && b.dim(0) == out_features,
          "dense: weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(in.shape()));

  Tensor<T> out(Shape{batch, out_features});
  ConstMatMap<T> X(in.data(), batch, in_features);
  ConstMatMap<T> W(w.data(), out_features, in_features);
  MatMap<T> Y(out.data(), batch, out_features);
  Y.noalias() = X * W.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b.data(), out_features);
  Y.rowwise() += B;

  return tape.record(std::move(out), {x, weight, bias},
                     [batch, in_features, out_features](const typename Tape<T>::BackwardContext& ctx) {
                       ConstMatMap<T> dY(ctx.grad.data(), batch, out_features);
                       if (Tensor<T>* gx = ctx.grad_in(0)) {
                         ConstMatMap<T> W(ctx.in(1).data(), out_features, in_features);
                         MatMap<T>(gx->data(), batch, in_features).noalias() += dY * W;
                       }
                       if (Tensor<T>* gw = ctx.grad_in(1)) {
                         ConstMatMap<T> X(ctx.in(0).data(), batch, in_features);
                         MatMap<T>(gw->data(), out_features, in_features).noalias() += dY.transpose() * X;
                       }
                       if (Tensor<T>* gb = ctx.grad_in(2)) {
                         Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->data(), out_features) +=
                             dY.colwise().sum();
                       }
                     });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& w = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require(in.rank() == 4 && w.rank() == 4 && b.rank() == 1,
          "conv2d: expected x (B, C, H, W), weight (Cout, Cin, k, k), bias (Cout)");
  require(stride > 0, "conv2d: stride must be positive");
  const int batch = in.dim(0), channels = in.dim(1), height = in.dim(2), width = in.dim(3);
  const int out_channels = w.dim(0), kernel = w.dim(2);
  require(w.dim(1) == channels && w.dim(3) == kernel && b.dim(0) == out_channels,
          "conv2d: weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(in.shape()));
  require(height >= kernel && width >= kernel,
          "conv2d: input " + shape_string(in.shape()) + " smaller than kernel " + std::to_string(kernel));
  const int out_h = conv_output_size(height, kernel, stride);
  const int out_w = conv_output_size(width, kernel, stride);
  const int patch = channels * kernel * kernel;
  const int positions = out_h * out_w;
  const std::size_t in_stride = static_cast<std::size_t>(channels) * height * width;
  const std::size_t out_stride = static_cast<std::size_t>(out_channels) * positions;

  Tensor<T> out(Shape{batch, out_channels, out_h, out_w});
  std::vector<T> cols(static_cast<std::size_t>(patch) * positions);
  ConstMatMap<T> W(w.data(), out_channels, patch);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> B(b.data(), out_channels);
  for (int n = 0; n < batch; ++n) {
    im2col(in.data() + n * in_stride, channels, height, width, kernel, stride, cols.data());
    MatMap<T> Y(out.data() + n * out_stride, out_channels, positions);
    Y.noalias() = W * ConstMatMap<T>(cols.data(), patch, positions);
    Y.colwise() += B;
  }

  return tape.record(
      std::move(out), {x, weight, bias},
      [=](const typename Tape<T>::BackwardContext& ctx) {
        Tensor<T>* gx = ctx.grad_in(0);
        Tensor<T>* gw = ctx.grad_in(1);
        Tensor<T>* gb = ctx.grad_in(2);
        ConstMatMap<T> W(ctx.in(1).data(), out_channels, patch);
        std::vector<T> cols(static_cast<std::size_t>(patch) * positions);
        RowMat<T> dcols;
        for (int n = 0; n < batch; ++n) {
          ConstMatMap<T> dY(ctx.grad.data() + n * out_stride, out_channels, positions);
          if (gw != nullptr) {
            im2col(ctx.in(0).data() + n * in_stride, channels, height, width, kernel, stride, cols.data());
            MatMap<T>(gw->data(), out_channels, patch).noalias() +=
                dY * ConstMatMap<T>(cols.data(), patch, positions).transpose();
          }
          if (gb != nullptr) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb->data(), out_channels) += dY.rowwise().sum();
          }
          if (gx != nullptr) {
            dcols.noalias() = W.transpose() * dY;
            col2im(dcols.data(), channels, height, width, kernel, stride, gx->data() + n * in_stride);
          }
        }
      });
}

template <typename T>
Var deconv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& w = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require(in.rank() == 4 && w.rank() == 4 && b.rank() == 1,
          "deconv2d: expected x (B, Cin, H, W), weight (Cin, Cout, k, k), bias (Cout)");
  require(stride > 0, "deconv2d: stride must be positive");
  const int batch = in.dim(0), channels = in.dim(1), height = in.dim(2), width = in.dim(3);
  const int out_channels = w.dim(1), kernel = w.dim(2);
  require(w.dim(0) == channels && w.dim(3) == kernel && b.dim(0) == out_channels,
          "deconv2d: weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(in.shape()));
  const int out_h = deconv_output_size(height, kernel, stride);
  const int out_w = deconv_output_size(width, kernel, stride);
  const int patch = out_channels * kernel * kernel;
  const int positions = height * width;
  const std::size_t in_stride = static_cast<std::size_t>(channels) * positions;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t out_stride = static_cast<std::size_t>(out_channels) * out_plane;

  Tensor<T> out(Shape{batch, out_channels, out_h, out_w});
  ConstMatMap<T> W(w.data(), channels, patch);
  RowMat<T> cols;
  for (int n = 0; n < batch; ++n) {
    cols.noalias() = W.transpose() * ConstMatMap<T>(in.data() + n * in_stride, channels, positions);
    T* dst = out.data() + n * out_stride;
    col2im(cols.data(), out_channels, out_h, out_w, kernel, stride, dst);
    for (int c = 0; c < out_channels; ++c) {
      T* plane = dst + c * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) plane[i] += b[static_cast<std::size_t>(c)];
    }
  }

  return tape.record(
      std::move(out), {x, weight, bias},
      [=](const typename Tape<T>::BackwardContext& ctx) {
        Tensor<T>* gx = ctx.grad_in(0);
        Tensor<T>* gw = ctx.grad_in(1);
        Tensor<T>* gb = ctx.grad_in(2);
        ConstMatMap<T> W(ctx.in(1).data(), channels, patch);
        std::vector<T> dcols(static_cast<std::size_t>(patch) * positions);
        for (int n = 0; n < batch; ++n) {
          const T* dy = ctx.grad.data() + n * out_stride;
          if (gb != nullptr) {
            for (int c = 0; c < out_channels; ++c) {
              const T* plane = dy + c * out_plane;
              T total = 0;
              for (std::size_t i = 0; i < out_plane; ++i) total += plane[i];
              (*gb)[static_cast<std::size_t>(c)] += total;
            }
          }
          if (gx == nullptr && gw == nullptr) continue;
          im2col(dy, out_channels, out_h, out_w, kernel, stride, dcols.data());
          ConstMatMap<T> dC(dcols.data(), patch, positions);
          if (gx != nullptr) {
            MatMap<T>(gx->data() + n * in_stride, channels, positions).noalias() += W * dC;
          }
          if (gw != nullptr) {
            ConstMatMap<T> X(ctx.in(0).data() + n * in_stride, channels, positions);
            MatMap<T>(gw->data(), channels, patch).noalias() += X * dC.transpose();
          }
        }
      });
}

template <typename T>
Var maxpool2d(Tape<T>& tape, Var x, int kernel, int stride) {
  const Tensor<T>& in = tape.value(x);
  require(in.rank() == 4, "maxpool2d expects an NCHW tensor");
  require(kernel > 0 && stride > 0, "maxpool2d: kernel and stride must be positive");
  const int batch = in.dim(0), channels = in.dim(1), height = in.dim(2), width = in.dim(3);
  require(height >= kernel && width >= kernel, "maxpool2d: input smaller than kernel");
  const int out_h = conv_output_size(height, kernel, stride);
  const int out_w = conv_output_size(width, kernel, stride);
  Tensor<T> out(Shape{batch, channels, out_h, out_w});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t plane = (static_cast<std::size_t>(n) * channels + c) * height * width;
      for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow, ++o) {
          std::size_t best = plane + static_cast<std::size_t>(oh * stride) * width + ow * stride;
          for (int ki = 0; ki < kernel; ++ki) {
            for (int kj = 0; kj < kernel; ++kj) {
              const std::size_t idx = plane + static_cast<std::size_t>(oh * stride + ki) * width + ow * stride + kj;
              if (in[idx] > in[best]) best = idx;
            }
          }
          argmax[o] = best;
          out[o] = in[best];
        }
      }
    }
  }
  return tape.record(std::move(out), {x}, [argmax = std::move(argmax)](const typename Tape<T>::BackwardContext& ctx) {
    if (Tensor<T>* gx = ctx.grad_in(0)) {
      for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += ctx.grad[i];
    }
  });
}

template <typename T>
Var batchnorm2d(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormStats<T>& stats,
                const BatchNormOptions& options) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& g = tape.value(gamma);
  const Tensor<T>& b = tape.value(beta);
  require(in.rank() == 4, "batchnorm2d expects an NCHW tensor");
  const int batch = in.dim(0), channels = in.dim(1);
  const std::size_t plane = static_cast<std::size_t>(in.dim(2)) * in.dim(3);
  require(g.size() == static_cast<std::size_t>(channels) && b.size() == static_cast<std::size_t>(channels) &&
              stats.running_mean.size() == static_cast<std::size_t>(channels),
          "batchnorm2d: parameter size does not match channel count " + std::to_string(channels));
  const std::size_t count = static_cast<std::size_t>(batch) * plane;
  const T eps = static_cast<T>(options.eps);
  const T momentum = static_cast<T>(options.momentum);

  std::vector<T> mean(static_cast<std::size_t>(channels));
  std::vector<T> inv_std(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    if (options.training) {
      T total = 0;
      for (int n = 0; n < batch; ++n) {
        const T* p = in.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) total += p[i];
      }
      const T mu = total / static_cast<T>(count);
      T sq = 0;
      for (int n = 0; n < batch; ++n) {
        const T* p = in.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const T var = sq / static_cast<T>(count);
      mean[cc] = mu;
      inv_std[cc] = T(1) / std::sqrt(var + eps);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      stats.running_mean[cc] = (T(1) - momentum) * stats.running_mean[cc] + momentum * mu;
      stats.running_var[cc] = (T(1) - momentum) * stats.running_var[cc] + momentum * unbiased;
    } else {
      mean[cc] = stats.running_mean[cc];
      inv_std[cc] = T(1) / std::sqrt(stats.running_var[cc] + eps);
    }
  }

  Tensor<T> normalized(in.shape());
  Tensor<T> out(in.shape());
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xhat = (in[base + i] - mean[cc]) * inv_std[cc];
        normalized[base + i] = xhat;
        out[base + i] = g[cc] * xhat + b[cc];
      }
    }
  }

  const bool training = options.training;
  return tape.record(
      std::move(out), {x, gamma, beta},
      [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          const typename Tape<T>::BackwardContext& ctx) {
        const Tensor<T>& gamma_value = ctx.in(1);
        Tensor<T>* gx = ctx.grad_in(0);
        Tensor<T>* gg = ctx.grad_in(1);
        Tensor<T>* gb = ctx.grad_in(2);
        for (int c = 0; c < channels; ++c) {
          const auto cc = static_cast<std::size_t>(c);
          T sum_dy = 0;
          T sum_dy_xhat = 0;
          for (int n = 0; n < batch; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += ctx.grad[base + i];
              sum_dy_xhat += ctx.grad[base + i] * normalized[base + i];
            }
          }
          if (gg != nullptr) (*gg)[cc] += sum_dy_xhat;
          if (gb != nullptr) (*gb)[cc] += sum_dy;
          if (gx == nullptr) continue;
          const T k = gamma_value[cc] * inv_std[cc];
          const T inv_count = T(1) / static_cast<T>(count);
          for (int n = 0; n < batch; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T dy = ctx.grad[base + i];
              if (training) {
                (*gx)[base + i] += k * (dy - inv_count * sum_dy - normalized[base + i] * inv_count * sum_dy_xhat);
              } else {
                (*gx)[base + i] += k * dy;
              }
            }
          }
        }
      });
}

#define FEPR_INSTANTIATE_OPS(T)                                                                 \
  template Var add<T>(Tape<T>&, Var, Var);                                                      \
  template Var sub<T>(Tape<T>&, Var, Var);                                                      \
  template Var mul<T>(Tape<T>&, Var, Var);                                                      \
  template Var scale<T>(Tape<T>&, Var, T);                                                      \
  template Var add_scalar<T>(Tape<T>&, Var, T);                                                 \
  template Var square<T>(Tape<T>&, Var);                                                        \
  template Var exp<T>(Tape<T>&, Var);                                                           \
  template Var log<T>(Tape<T>&, Var);                                                           \
  template Var clamp<T>(Tape<T>&, Var, T, T);                                                   \
  template Var relu<T>(Tape<T>&, Var);                                                          \
  template Var sigmoid<T>(Tape<T>&, Var);                                                       \
  template Var softmax<T>(Tape<T>&, Var);                                                       \
  template Var sum<T>(Tape<T>&, Var);                                                           \
  template Var sum_rows<T>(Tape<T>&, Var);                                                      \
  template Var mean<T>(Tape<T>&, Var);                                                          \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                                \
  template Var concat_cols<T>(Tape<T>&, const std::vector<Var>&);                               \
  template Var gather_cols<T>(Tape<T>&, Var, const std::vector<int>&);                          \
  template Var stop_gradient<T>(Tape<T>&, Var);                                                 \
  template Var dense<T>(Tape<T>&, Var, Var, Var);                                               \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int);                                         \
  template Var deconv2d<T>(Tape<T>&, Var, Var, Var, int);                                       \
  template Var maxpool2d<T>(Tape<T>&, Var, int, int);                                           \
  template Var batchnorm2d<T>(Tape<T>&, Var, Var, Var, BatchNormStats<T>&, const BatchNormOptions&);

FEPR_INSTANTIATE_OPS(float)
FEPR_INSTANTIATE_OPS(double)

}  // namespace fepr::nn
