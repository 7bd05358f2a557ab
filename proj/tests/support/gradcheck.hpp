#pragma once

// Central finite-difference gradient oracle. Runs in double precision and only uses
// forward passes, so it stays independent of the backward implementations it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fepr/nn/tape.hpp"

namespace fepr::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // parameter name and index of the worst entry
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// `build` records a scalar loss on a fresh tape. Every entry of every parameter is perturbed
// by +-step; up to `max_entries` entries per parameter are checked (evenly strided).
inline GradCheckResult check_gradients(const std::vector<nn::Parameter<double>*>& params,
                                       const std::function<nn::Var(nn::Tape<double>&)>& build,
                                       double step = 1e-5, std::size_t max_entries = 64) {
  nn::Tape<double> tape;
  const nn::Var loss = build(tape);
  const nn::GradientMap<double> grads = tape.backward(loss);

  auto evaluate = [&]() {
    nn::Tape<double> t(false);
    return t.value(build(t)).item();
  };

  GradCheckResult result;
  for (nn::Parameter<double>* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
    auto it = grads.find(p);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = evaluate();
      p->value[i] = saved - step;
      const double down = evaluate();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = it == grads.end() ? 0.0 : it->second[i];
      const double err = relative_error(analytic, numeric);
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline void fill_uniform(nn::Tensor<double>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
}

}  // namespace fepr::testing
