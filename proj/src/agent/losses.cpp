#include "fepr/agent/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fepr/errors.hpp"

namespace fepr::agent {

using nn::Var;

template <typename T>
VaeLossTerms<T> vae_loss(nn::Tape<T>& tape, Var recon, Var target, Var mu, Var logvar) {
  if (tape.shape(recon) != tape.shape(target)) throw ConfigError("vae_loss: recon and target shapes differ");
  const T batch = static_cast<T>(tape.shape(recon)[0]);
  const Var r = nn::clamp(tape, recon, T(kBceClamp), T(1.0 - kBceClamp));
  const Var one_minus_t = nn::add_scalar(tape, nn::scale(tape, target, T(-1)), T(1));
  const Var one_minus_r = nn::add_scalar(tape, nn::scale(tape, r, T(-1)), T(1));
  const Var ll = nn::add(tape, nn::mul(tape, target, nn::log(tape, r)), nn::mul(tape, one_minus_t, nn::log(tape, one_minus_r)));
  VaeLossTerms<T> out;
  out.bce = nn::scale(tape, nn::sum(tape, ll), T(-1) / batch);
  // -1/2 sum(1 + logvar - mu^2 - exp(logvar))
  const Var inner = nn::sub(tape, nn::add_scalar(tape, logvar, T(1)), nn::add(tape, nn::square(tape, mu), nn::exp(tape, logvar)));
  out.kl = nn::scale(tape, nn::sum(tape, inner), T(-0.5) / batch);
  out.total = nn::add(tape, out.bce, out.kl);
  return out;
}

template <typename T>
Var latent_input(nn::Tape<T>& tape, Var mu, Var logvar) {
  return nn::concat_cols(tape, {mu, nn::exp(tape, logvar)});
}

template <typename T>
Var transition_input(nn::Tape<T>& tape, Var mu, Var logvar, const std::vector<int>& actions) {
  const int batch = tape.shape(mu)[0];
  if (static_cast<int>(actions.size()) != batch) throw ConfigError("transition_input: one action per row required");
  nn::Tensor<T> a(nn::Shape{batch, 1});
  for (int b = 0; b < batch; ++b) a[static_cast<std::size_t>(b)] = static_cast<T>(actions[static_cast<std::size_t>(b)]) / T(10);
  return nn::concat_cols(tape, {mu, nn::exp(tape, logvar), tape.constant(std::move(a))});
}

template <typename T>
Var mse(nn::Tape<T>& tape, Var a, Var b) {
  return nn::mean(tape, nn::square(tape, nn::sub(tape, a, b)));
}

template <typename T>
Var state_kl(nn::Tape<T>& tape, Var s_hat, Var mu, Var logvar) {
  // 1/2 sum_d [logvar + (1 + (s_hat - mu)^2) / var - 1]
  const Var inv_var = nn::exp(tape, nn::scale(tape, logvar, T(-1)));
  const Var spread = nn::mul(tape, nn::add_scalar(tape, nn::square(tape, nn::sub(tape, s_hat, mu)), T(1)), inv_var);
  const Var terms = nn::add(tape, nn::add_scalar(tape, logvar, T(-1)), spread);
  return nn::scale(tape, nn::sum_rows(tape, terms), T(0.5));
}

template <typename T>
Var policy_kl(nn::Tape<T>& tape, Var q, Var p) {
  const T batch = static_cast<T>(tape.shape(q)[0]);
  const Var log_q = nn::log(tape, nn::clamp(tape, q, T(kProbFloor), T(1)));
  const Var log_p = nn::log(tape, nn::clamp(tape, p, T(kProbFloor), T(1)));
  return nn::scale(tape, nn::sum(tape, nn::mul(tape, q, nn::sub(tape, log_q, log_p))), T(1) / batch);
}

template <typename T>
Var policy_kl_logits(nn::Tape<T>& tape, Var logits, const nn::Tensor<T>& p) {
  const nn::Tensor<T>& l = tape.value(logits);
  if (l.rank() != 2 || l.shape() != p.shape()) throw ConfigError("policy_kl_logits: logits and prior shapes differ");
  const int rows = l.dim(0);
  const int cols = l.dim(1);
  const double log_floor = std::log(kProbFloor);
  // per-entry q and (log q - log p), plus per-row KL
  nn::Tensor<T> q(l.shape()), diff(l.shape());
  std::vector<double> row_kl(static_cast<std::size_t>(rows));
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    double top = l[base];
    for (int c = 1; c < cols; ++c) top = std::max(top, static_cast<double>(l[base + c]));
    double z = 0.0;
    for (int c = 0; c < cols; ++c) z += std::exp(static_cast<double>(l[base + c]) - top);
    const double log_z = std::log(z);
    double kl = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double log_q = std::max(static_cast<double>(l[base + c]) - top - log_z, log_floor);
      const double log_p = std::log(std::max(static_cast<double>(p[base + c]), kProbFloor));
      const double qv = std::exp(static_cast<double>(l[base + c]) - top - log_z);
      q[base + c] = static_cast<T>(qv);
      diff[base + c] = static_cast<T>(log_q - log_p);
      kl += qv * (log_q - log_p);
    }
    row_kl[static_cast<std::size_t>(r)] = kl;
    total += kl;
  }
  return tape.record(nn::Tensor<T>::scalar(static_cast<T>(total / rows)), {logits},
                     [q, diff, row_kl, rows, cols](const typename nn::Tape<T>::BackwardContext& ctx) {
                       nn::Tensor<T>* gl = ctx.grad_in(0);
                       if (!gl) return;
                       const T g = ctx.grad[0] / static_cast<T>(rows);
                       for (int r = 0; r < rows; ++r) {
                         const std::size_t base = static_cast<std::size_t>(r) * cols;
                         for (int c = 0; c < cols; ++c) {
                           (*gl)[base + c] += g * q[base + c] * (diff[base + c] - static_cast<T>(row_kl[static_cast<std::size_t>(r)]));
                         }
                       }
                     });
}

template <typename T>
Var value_loss(nn::Tape<T>& tape, Var efe, const std::vector<int>& actions, const nn::Tensor<T>& targets) {
  const Var picked = nn::gather_cols(tape, efe, actions);
  if (targets.shape() != tape.shape(picked)) throw ConfigError("value_loss: one target per row required");
  return mse(tape, picked, tape.constant(targets));
}

std::vector<double> boltzmann_prior(std::span<const double> efe, double gamma) {
  std::vector<double> out(efe.size());
  if (efe.empty()) return out;
  double top = -1e300;
  for (double g : efe) top = std::max(top, -gamma * g);
  double total = 0.0;
  for (std::size_t i = 0; i < efe.size(); ++i) {
    out[i] = std::exp(-gamma * efe[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double efe_target(double reward, double kl, std::span<const double> next_policy, std::span<const double> next_efe_target,
                  bool done, double beta) {
  double g = -reward + kl;
  if (done) return g;
  if (next_policy.size() != next_efe_target.size()) throw ConfigError("efe_target: policy and EFE sizes differ");
  double expected = 0.0;
  for (std::size_t a = 0; a < next_policy.size(); ++a) expected += next_policy[a] * next_efe_target[a];
  return g + beta * expected;
}

#define FEPR_INSTANTIATE_LOSSES(T)                                                                      \
  template VaeLossTerms<T> vae_loss<T>(nn::Tape<T>&, Var, Var, Var, Var);                              \
  template Var latent_input<T>(nn::Tape<T>&, Var, Var);                                                \
  template Var transition_input<T>(nn::Tape<T>&, Var, Var, const std::vector<int>&);                   \
  template Var mse<T>(nn::Tape<T>&, Var, Var);                                                         \
  template Var state_kl<T>(nn::Tape<T>&, Var, Var, Var);                                               \
  template Var policy_kl<T>(nn::Tape<T>&, Var, Var);                                                   \
  template Var policy_kl_logits<T>(nn::Tape<T>&, Var, const nn::Tensor<T>&);                           \
  template Var value_loss<T>(nn::Tape<T>&, Var, const std::vector<int>&, const nn::Tensor<T>&);

FEPR_INSTANTIATE_LOSSES(float)
FEPR_INSTANTIATE_LOSSES(double)

}  // namespace fepr::agent
