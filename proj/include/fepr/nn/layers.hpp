#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fepr/nn/ops.hpp"

namespace fepr::nn {

// Everything a network owns that goes into a checkpoint: trainable parameters plus
// non-trainable buffers such as batch-norm running statistics.
template <typename T>
struct StateRefs {
  std::vector<Parameter<T>*> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void append(const StateRefs& other) {
    params.insert(params.end(), other.params.begin(), other.params.end());
    buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named() const {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (Parameter<T>* p : params) out.emplace_back(p->name, &p->value);
    out.insert(out.end(), buffers.begin(), buffers.end());
    return out;
  }
};

// Kaiming-uniform: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
void kaiming_uniform(Tensor<T>& tensor, double fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / std::max(fan_in, 1.0));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : tensor.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, int in_features, int out_features)
      : weight{name + ".weight", Tensor<T>(Shape{out_features, in_features})},
        bias{name + ".bias", Tensor<T>(Shape{out_features})} {}

  void init(std::mt19937_64& rng) {
    kaiming_uniform(weight.value, weight.value.dim(1), rng);
    bias.value.fill(T(0));
  }

  Var forward(Tape<T>& tape, Var x) { return dense(tape, x, tape.parameter(weight), tape.parameter(bias)); }

  int in_features() const { return weight.value.dim(1); }
  int out_features() const { return weight.value.dim(0); }

  StateRefs<T> state() { return {{&weight, &bias}, {}}; }

  Parameter<T> weight;
  Parameter<T> bias;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride)
      : weight{name + ".weight", Tensor<T>(Shape{out_channels, in_channels, kernel, kernel})},
        bias{name + ".bias", Tensor<T>(Shape{out_channels})},
        stride_(stride) {}

  void init(std::mt19937_64& rng) {
    const int k = weight.value.dim(2);
    kaiming_uniform(weight.value, static_cast<double>(weight.value.dim(1)) * k * k, rng);
    bias.value.fill(T(0));
  }

  Var forward(Tape<T>& tape, Var x) {
    return conv2d(tape, x, tape.parameter(weight), tape.parameter(bias), stride_);
  }

  int stride() const { return stride_; }
  StateRefs<T> state() { return {{&weight, &bias}, {}}; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  int stride_ = 1;
};

template <typename T>
class Deconv2d {
 public:
  Deconv2d() = default;
  Deconv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride)
      : weight{name + ".weight", Tensor<T>(Shape{in_channels, out_channels, kernel, kernel})},
        bias{name + ".bias", Tensor<T>(Shape{out_channels})},
        stride_(stride) {}

  // Fan-in of a transposed convolution counts the inputs that overlap one output pixel.
  void init(std::mt19937_64& rng) {
    const int k = weight.value.dim(2);
    const double overlap = static_cast<double>(k) * k / (static_cast<double>(stride_) * stride_);
    kaiming_uniform(weight.value, weight.value.dim(0) * std::max(overlap, 1.0), rng);
    bias.value.fill(T(0));
  }

  Var forward(Tape<T>& tape, Var x) {
    return deconv2d(tape, x, tape.parameter(weight), tape.parameter(bias), stride_);
  }

  int stride() const { return stride_; }
  StateRefs<T> state() { return {{&weight, &bias}, {}}; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  int stride_ = 1;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels)
      : gamma{name + ".gamma", Tensor<T>(Shape{channels}, T(1))},
        beta{name + ".beta", Tensor<T>(Shape{channels}, T(0))},
        stats(channels),
        name_(name) {}

  void init(std::mt19937_64&) {
    gamma.value.fill(T(1));
    beta.value.fill(T(0));
    stats = BatchNormStats<T>(gamma.value.dim(0));
  }

  Var forward(Tape<T>& tape, Var x, bool training) {
    BatchNormOptions options;
    options.training = training;
    return batchnorm2d(tape, x, tape.parameter(gamma), tape.parameter(beta), stats, options);
  }

  StateRefs<T> state() {
    return {{&gamma, &beta},
            {{name_ + ".running_mean", &stats.running_mean}, {name_ + ".running_var", &stats.running_var}}};
  }

  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> stats;

 private:
  std::string name_;
};

// Copies values (parameters and buffers) between two identically structured networks.
template <typename T>
void copy_state(const StateRefs<T>& from, const StateRefs<T>& to) {
  const auto src = from.named();
  const auto dst = to.named();
  if (src.size() != dst.size()) throw ConfigError("copy_state: networks differ in structure");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].second->shape() != dst[i].second->shape()) {
      throw ConfigError("copy_state: shape mismatch at " + src[i].first);
    }
    *dst[i].second = *src[i].second;
  }
}

template <typename T>
void set_trainable(const StateRefs<T>& state, bool trainable) {
  for (Parameter<T>* p : state.params) p->trainable = trainable;
}

}  // namespace fepr::nn
