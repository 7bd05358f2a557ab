#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <spdlog/spdlog.h>

#include "fepr/nn/tape.hpp"

namespace fepr::nn {

struct OptimizerConfig {
  enum class Kind { adam, sgd };
  Kind kind = Kind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam (with bias correction) or plain SGD over a fixed parameter list.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(std::vector<Parameter<T>*> params, OptimizerConfig config)
      : params_(std::move(params)), config_(config) {
    for (Parameter<T>* p : params_) {
      first_.emplace_back(p->value.shape(), T(0));
      second_.emplace_back(p->value.shape(), T(0));
    }
  }

  const OptimizerConfig& config() const noexcept { return config_; }
  std::int64_t step_count() const noexcept { return steps_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return first_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return second_; }

  // Parameters absent from `grads` are left untouched. A tensor whose gradient is not
  // finite is skipped (moments included) with a warning.
  void step(const GradientMap<T>& grads) {
    ++steps_;
    const double lr = config_.learning_rate;
    const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter<T>& param = *params_[k];
      auto it = grads.find(&param);
      if (it == grads.end()) continue;
      const Tensor<T>& g = it->second;
      if (g.shape() != param.value.shape()) {
        throw ConfigError("optimizer: gradient shape mismatch for " + param.name);
      }
      if (!g.all_finite()) {
        spdlog::warn("optimizer: non-finite gradient for '{}', skipping update", param.name);
        continue;
      }
      if (config_.kind == OptimizerConfig::Kind::sgd) {
        for (std::size_t i = 0; i < g.size(); ++i) param.value[i] -= static_cast<T>(lr) * g[i];
        continue;
      }
      Tensor<T>& m = first_[k];
      Tensor<T>& v = second_[k];
      const T b1 = static_cast<T>(config_.beta1);
      const T b2 = static_cast<T>(config_.beta2);
      const T step_size = static_cast<T>(lr / correction1);
      const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(correction2));
      const T eps = static_cast<T>(config_.eps);
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        param.value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
      }
    }
  }

 private:
  std::vector<Parameter<T>*> params_;
  OptimizerConfig config_;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
  std::int64_t steps_ = 0;
};

}  // namespace fepr::nn
