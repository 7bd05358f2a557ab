#pragma once

#include <random>
#include <span>

namespace fepr::agent {

enum class ActMode { train, eval };

// First index of the maximum; ties go to the lowest index.
template <typename T>
int argmax(std::span<const T> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

// Inverse-CDF draw from an unnormalised non-negative weight vector.
template <typename T>
int sample_categorical(std::span<const T> probs, std::mt19937_64& rng) {
  double total = 0.0;
  for (T p : probs) total += static_cast<double>(p);
  std::uniform_real_distribution<double> unit(0.0, total);
  const double u = unit(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
    const double p = static_cast<double>(probs[static_cast<std::size_t>(i)]);
    if (p <= 0.0) continue;
    acc += p;
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

}  // namespace fepr::agent
