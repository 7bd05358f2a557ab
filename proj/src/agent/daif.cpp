#include "fepr/agent/daif.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fepr/agent/losses.hpp"
#include "fepr/errors.hpp"

namespace fepr::agent {

using nn::Tape;
using nn::Tensor;
using nn::Var;

void to_json(nlohmann::json& j, const DaifConfig& c) {
  j = {{"vae", c.vae},
       {"hidden", c.hidden},
       {"gamma", c.gamma},
       {"beta", c.beta},
       {"alpha", c.alpha},
       {"lr_transition", c.lr_transition},
       {"lr_policy", c.lr_policy},
       {"lr_value", c.lr_value},
       {"lr_vae", c.lr_vae},
       {"batch_size", c.batch_size},
       {"memory_capacity", c.memory_capacity},
       {"freeze_period", c.freeze_period},
       {"learn_every", c.learn_every},
       {"report_vae_loss", c.report_vae_loss}};
}

void from_json(const nlohmann::json& j, DaifConfig& c) {
  const DaifConfig d;
  c.vae = j.value("vae", d.vae);
  c.hidden = j.value("hidden", d.hidden);
  c.gamma = j.value("gamma", d.gamma);
  c.beta = j.value("beta", d.beta);
  c.alpha = j.value("alpha", d.alpha);
  c.lr_transition = j.value("lr_transition", d.lr_transition);
  c.lr_policy = j.value("lr_policy", d.lr_policy);
  c.lr_value = j.value("lr_value", d.lr_value);
  c.lr_vae = j.value("lr_vae", d.lr_vae);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.memory_capacity = j.value("memory_capacity", d.memory_capacity);
  c.freeze_period = j.value("freeze_period", d.freeze_period);
  c.learn_every = j.value("learn_every", d.learn_every);
  c.report_vae_loss = j.value("report_vae_loss", d.report_vae_loss);
}

void validate(const DaifConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("daif config: ") + what);
  };
  require(c.gamma > 0, "gamma must be positive");
  require(c.beta > 0 && c.beta <= 1, "beta must lie in (0, 1]");
  require(c.alpha > 0, "alpha must be positive");
  require(c.hidden > 0 && c.vae.latent > 0, "hidden and latent sizes must be positive");
  require(c.actions == 11, "the action space has 11 entries");
  require(c.lr_transition > 0 && c.lr_policy > 0 && c.lr_value > 0 && c.lr_vae > 0, "learning rates must be positive");
  require(c.batch_size > 0, "batch_size must be positive");
  require(c.memory_capacity >= static_cast<std::size_t>(c.batch_size), "memory_capacity must hold one batch");
  require(c.freeze_period > 0 && c.learn_every > 0, "freeze_period and learn_every must be positive");
}

void to_json(nlohmann::json& j, const DaifLosses& l) {
  j = {{"vae", l.vae}, {"transition", l.transition}, {"policy", l.policy}, {"value", l.value}, {"total", l.total}};
}

namespace {

nn::OptimizerConfig adam(double lr) {
  nn::OptimizerConfig c;
  c.learning_rate = lr;
  return c;
}

DaifConfig checked(DaifConfig c) {
  validate(c);
  return c;
}

std::vector<double> row(const Tensor<float>& m, int r) {
  const int cols = m.dim(1);
  std::vector<double> out(static_cast<std::size_t>(cols));
  for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c)] = m[static_cast<std::size_t>(r) * cols + c];
  return out;
}

std::vector<float> to_vector(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

DaifAgent::DaifAgent(DaifConfig config, std::uint64_t seed)
    : config_(checked(std::move(config))),
      rng_(seed),
      vae_(config_.vae),
      transition_("trans", 2 * config_.vae.latent + 1, config_.hidden, config_.vae.latent),
      policy_("policy", 2 * config_.vae.latent, config_.hidden, config_.actions),
      value_("value", 2 * config_.vae.latent, config_.hidden, config_.actions),
      value_target_("value_target", 2 * config_.vae.latent, config_.hidden, config_.actions),
      memory_(config_.memory_capacity),
      target_sync_(config_.freeze_period) {
  vae_.init(rng_);
  transition_.init(rng_);
  policy_.init(rng_);
  value_.init(rng_);
  sync_target();
  nn::set_trainable(value_target_.state(), false);
  opt_transition_ = nn::Optimizer<float>(transition_.state().params, adam(config_.lr_transition));
  opt_policy_ = nn::Optimizer<float>(policy_.state().params, adam(config_.lr_policy));
  opt_value_ = nn::Optimizer<float>(value_.state().params, adam(config_.lr_value));
}

void DaifAgent::freeze_vae() {
  nn::set_trainable(vae_.state(), false);
  vae_frozen_ = true;
}

void DaifAgent::sync_target() { nn::copy_state(value_.state(), value_target_.state()); }

std::vector<Encoding> DaifAgent::encode_batch(const std::vector<const data::ObservationStack*>& stacks,
                                              bool with_vae_loss) {
  Tape<float> tape(false);
  const Var x = tape.constant(data::stack_batch(stacks));
  const auto enc = vae_.encode(tape, x, false);
  const Tensor<float>& mu = tape.value(enc.mu);
  const Tensor<float>& logvar = tape.value(enc.logvar);
  const int batch = mu.dim(0);
  const int latent = mu.dim(1);
  if (!mu.all_finite() || !logvar.all_finite()) {
    throw NumericError("vae encoder produced non-finite activations for a batch of " + std::to_string(batch));
  }
  std::vector<Encoding> out(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    auto& e = out[static_cast<std::size_t>(b)];
    e.latent.mu.assign(mu.data() + static_cast<std::size_t>(b) * latent, mu.data() + static_cast<std::size_t>(b + 1) * latent);
    e.latent.logvar.assign(logvar.data() + static_cast<std::size_t>(b) * latent,
                           logvar.data() + static_cast<std::size_t>(b + 1) * latent);
  }
  if (with_vae_loss) {
    // One decode per row so each stack gets its own loss value.
    for (int b = 0; b < batch; ++b) {
      Tape<float> t(false);
      const Var m = t.constant(Tensor<float>(nn::Shape{1, latent}, out[static_cast<std::size_t>(b)].latent.mu));
      const Var lv = t.constant(Tensor<float>(nn::Shape{1, latent}, out[static_cast<std::size_t>(b)].latent.logvar));
      const Var z = vae_.sample(t, {m, lv}, gaussian_noise<float>(1, latent, rng_));
      const Var recon = vae_.decode(t, z, false);
      const Var target = t.constant(data::stack_tensor(*stacks[static_cast<std::size_t>(b)]));
      out[static_cast<std::size_t>(b)].vae_loss = t.value(vae_loss(t, recon, target, m, lv).total)[0];
    }
  }
  return out;
}

Encoding DaifAgent::encode(const data::ObservationStack& stack, bool with_vae_loss) {
  return std::move(encode_batch({&stack}, with_vae_loss).front());
}

Tensor<float> DaifAgent::latent_matrix(const std::vector<const LatentState*>& states, bool logvar) const {
  const int latent = config_.vae.latent;
  Tensor<float> m(nn::Shape{static_cast<int>(states.size()), latent});
  for (std::size_t b = 0; b < states.size(); ++b) {
    const std::vector<float>& src = logvar ? states[b]->logvar : states[b]->mu;
    if (static_cast<int>(src.size()) != latent) throw ConfigError("latent state has the wrong size");
    std::copy(src.begin(), src.end(), m.data() + b * static_cast<std::size_t>(latent));
  }
  return m;
}

std::vector<float> DaifAgent::policy(const LatentState& s) {
  Tape<float> tape(false);
  const Var in = latent_input(tape, tape.constant(latent_matrix({&s}, false)), tape.constant(latent_matrix({&s}, true)));
  return to_vector(tape.value(nn::softmax(tape, policy_.forward(tape, in))));
}

std::vector<float> DaifAgent::efe(const LatentState& s) {
  Tape<float> tape(false);
  const Var in = latent_input(tape, tape.constant(latent_matrix({&s}, false)), tape.constant(latent_matrix({&s}, true)));
  return to_vector(tape.value(value_.forward(tape, in)));
}

std::vector<float> DaifAgent::predict_next(const LatentState& s, int action) {
  Tape<float> tape(false);
  const Var in = transition_input(tape, tape.constant(latent_matrix({&s}, false)), tape.constant(latent_matrix({&s}, true)),
                                  {action});
  return to_vector(tape.value(transition_.forward(tape, in)));
}

int DaifAgent::select_action(const LatentState& s, ActMode mode) {
  const std::vector<float> q = policy(s);
  if (mode == ActMode::eval) return argmax<float>(q);
  return sample_categorical<float>(q, rng_);
}

DaifLosses DaifAgent::learn(const std::vector<const LatentTransition*>& batch) {
  if (batch.empty()) throw ConfigError("daif learn: empty batch");
  const int n = static_cast<int>(batch.size());
  std::vector<const LatentState*> now, next;
  std::vector<int> actions;
  double vae_sum = 0.0;
  for (const LatentTransition* t : batch) {
    if (t->action < 0 || t->action >= config_.actions) throw std::out_of_range("daif learn: action out of range");
    now.push_back(&t->state);
    next.push_back(&t->next);
    actions.push_back(t->action);
    vae_sum += t->vae_loss;
  }
  const Tensor<float> mu0 = latent_matrix(now, false);
  const Tensor<float> lv0 = latent_matrix(now, true);
  const Tensor<float> mu1 = latent_matrix(next, false);
  const Tensor<float> lv1 = latent_matrix(next, true);

  Tape<float> tape;
  const Var mu0_v = tape.constant(mu0);
  const Var lv0_v = tape.constant(lv0);
  const Var mu1_v = tape.constant(mu1);

  // Transition: predict the next encoder mean.
  const Var s_hat = transition_.forward(tape, transition_input(tape, mu0_v, lv0_v, actions));
  const Var loss_transition = mse(tape, s_hat, mu1_v);

  const std::vector<float> efe_hat = efe_targets(batch);
  const Tensor<float> targets(nn::Shape{n}, efe_hat);

  const Var in0 = latent_input(tape, mu0_v, lv0_v);
  const Var g0 = value_.forward(tape, in0);
  const Var loss_value = value_loss(tape, g0, actions, targets);

  // Policy: KL to the Boltzmann prior over the current (detached) EFE estimate.
  Tensor<float> prior(nn::Shape{n, config_.actions});
  {
    const Tensor<float>& g = tape.value(g0);
    for (int b = 0; b < n; ++b) {
      const std::vector<double> p = boltzmann_prior(row(g, b), config_.gamma);
      for (int a = 0; a < config_.actions; ++a) {
        prior[static_cast<std::size_t>(b) * config_.actions + a] = static_cast<float>(p[static_cast<std::size_t>(a)]);
      }
    }
  }
  const Var loss_policy = policy_kl_logits(tape, policy_.forward(tape, in0), prior);

  const Var objective = nn::add(tape, nn::add(tape, loss_transition, loss_policy), loss_value);

  DaifLosses out;
  out.vae = vae_sum / n / config_.alpha;
  out.transition = tape.value(loss_transition)[0];
  out.policy = tape.value(loss_policy)[0];
  out.value = tape.value(loss_value)[0];
  out.total = out.vae + out.transition + out.policy;
  if (!std::isfinite(tape.value(objective)[0]) || !std::isfinite(out.total)) {
    double fingerprint = 0.0;
    for (const LatentTransition* t : batch) fingerprint += t->action + 0.001 * t->reward + (t->state.mu.empty() ? 0.0 : t->state.mu[0]);
    spdlog::error("daif learn: non-finite loss (transition={}, policy={}, value={}); batch of {} fingerprint {:.6f}; step skipped",
                  out.transition, out.policy, out.value, n, fingerprint);
    return out;
  }
  const nn::GradientMap<float> grads = tape.backward(objective);
  opt_transition_.step(grads);
  opt_policy_.step(grads);
  opt_value_.step(grads);
  out.applied = true;
  return out;
}

std::vector<float> DaifAgent::efe_targets(const std::vector<const LatentTransition*>& batch) {
  std::vector<const LatentState*> now, next;
  std::vector<int> actions;
  for (const LatentTransition* t : batch) {
    now.push_back(&t->state);
    next.push_back(&t->next);
    actions.push_back(t->action);
  }
  Tape<float> t(false);
  const Var s_hat =
      transition_.forward(t, transition_input(t, t.constant(latent_matrix(now, false)), t.constant(latent_matrix(now, true)), actions));
  const Var mu1 = t.constant(latent_matrix(next, false));
  const Var lv1 = t.constant(latent_matrix(next, true));
  const Tensor<float> kl = t.value(state_kl(t, s_hat, mu1, lv1));
  const Var in1 = latent_input(t, mu1, lv1);
  const Tensor<float> q1 = t.value(nn::softmax(t, policy_.forward(t, in1)));
  const Tensor<float> g1 = t.value(value_target_.forward(t, in1));
  std::vector<float> out(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out[b] = static_cast<float>(efe_target(batch[b]->reward, kl[b], row(q1, static_cast<int>(b)), row(g1, static_cast<int>(b)),
                                           batch[b]->done, config_.beta));
  }
  return out;
}

DaifLosses DaifAgent::learn_stacks(const std::vector<const data::Transition*>& batch) {
  std::vector<const data::ObservationStack*> now, next;
  for (const data::Transition* t : batch) {
    now.push_back(&t->state);
    next.push_back(&t->next);
  }
  const std::vector<Encoding> e0 = encode_batch(now, config_.report_vae_loss);
  const std::vector<Encoding> e1 = encode_batch(next, false);
  std::vector<LatentTransition> items(batch.size());
  std::vector<const LatentTransition*> ptrs;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    items[i] = {e0[i].latent, batch[i]->action, batch[i]->reward, e1[i].latent, batch[i]->done, e0[i].vae_loss};
    ptrs.push_back(&items[i]);
  }
  return learn(ptrs);
}

std::optional<DaifLosses> DaifAgent::on_env_step() {
  ++env_steps_;
  std::optional<DaifLosses> losses;
  if (env_steps_ % config_.learn_every == 0) {
    if (const auto batch = memory_.sample(static_cast<std::size_t>(config_.batch_size), rng_)) losses = learn(*batch);
  }
  if (target_sync_.tick()) sync_target();
  return losses;
}

nn::StateRefs<float> DaifAgent::agent_state() {
  nn::StateRefs<float> s = vae_.state();
  s.append(transition_.state());
  s.append(policy_.state());
  s.append(value_.state());
  s.append(value_target_.state());
  return s;
}

nn::NamedTensors DaifAgent::snapshot() {
  nn::NamedTensors out = nn::snapshot(agent_state());
  if (vae_frozen_) out.emplace_back(kVaeFrozenMarker, Tensor<float>(nn::Shape{1}, 1.f));
  return out;
}

void DaifAgent::restore(const nn::NamedTensors& tensors, bool vae_only) {
  nn::restore(tensors, vae_only ? vae_.state() : agent_state());
  for (const auto& [name, t] : tensors) {
    if (name == kVaeFrozenMarker) freeze_vae();
  }
}

}  // namespace fepr::agent
