#pragma once

#include <span>
#include <vector>

#include "fepr/nn/ops.hpp"

namespace fepr::agent {

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kProbFloor = 1e-9;

template <typename T>
struct VaeLossTerms {
  nn::Var total;
  nn::Var bce;  // summed over pixels, averaged over the batch
  nn::Var kl;   // summed over latent dims, averaged over the batch
};

// recon and target share a shape with the batch on axis 0; mu / logvar are (B, L).
template <typename T>
VaeLossTerms<T> vae_loss(nn::Tape<T>& tape, nn::Var recon, nn::Var target, nn::Var mu, nn::Var logvar);

// [mu, exp(logvar)] as consumed by the policy and value networks: (B, 2L).
template <typename T>
nn::Var latent_input(nn::Tape<T>& tape, nn::Var mu, nn::Var logvar);

// [mu, exp(logvar), action / 10]: (B, 2L + 1).
template <typename T>
nn::Var transition_input(nn::Tape<T>& tape, nn::Var mu, nn::Var logvar, const std::vector<int>& actions);

// Mean over every element of (a - b)^2.
template <typename T>
nn::Var mse(nn::Tape<T>& tape, nn::Var a, nn::Var b);

// KL[N(s_hat, I) || N(mu, exp(logvar))] per row: (B).
template <typename T>
nn::Var state_kl(nn::Tape<T>& tape, nn::Var s_hat, nn::Var mu, nn::Var logvar);

// Batch mean of KL[q || p] for row-stochastic (B, A) matrices, logs floored at 1e-9.
template <typename T>
nn::Var policy_kl(nn::Tape<T>& tape, nn::Var q, nn::Var p);

// Same quantity from policy logits, q = softmax(logits). The gradient is the closed form
// q * (log q - log p - KL), which is exactly zero when q already equals p.
template <typename T>
nn::Var policy_kl_logits(nn::Tape<T>& tape, nn::Var logits, const nn::Tensor<T>& p);

// Batch mean of (G[b, a_b] - target_b)^2.
template <typename T>
nn::Var value_loss(nn::Tape<T>& tape, nn::Var efe, const std::vector<int>& actions, const nn::Tensor<T>& targets);

// softmax(-gamma * G)
std::vector<double> boltzmann_prior(std::span<const double> efe, double gamma);

// -r + kl + (done ? 0 : beta * sum_a next_policy[a] * next_efe_target[a])
double efe_target(double reward, double kl, std::span<const double> next_policy,
                  std::span<const double> next_efe_target, bool done, double beta);

}  // namespace fepr::agent
