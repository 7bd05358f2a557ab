#include <doctest.h>

#include <cmath>

#include "fepr/agent/daif.hpp"
#include "fepr/agent/losses.hpp"

using namespace fepr;
using namespace fepr::agent;

namespace {

DaifConfig tiny_config() {
  DaifConfig c;
  c.vae.latent = 4;
  c.vae.channels = {2, 2, 2, 4};
  c.vae.dense_width = 4;
  c.hidden = 8;
  c.batch_size = 4;
  c.memory_capacity = 64;
  return c;
}

LatentState latent(std::vector<float> mu, std::vector<float> logvar) { return {std::move(mu), std::move(logvar)}; }

// Plain-loop evaluation of in -> relu(W1 x + b1) -> W2 h + b2, in double.
std::vector<double> mlp_oracle(Mlp<float>& net, const std::vector<double>& x) {
  auto params = net.state().params;
  const auto& w1 = params[0]->value;
  const auto& b1 = params[1]->value;
  const auto& w2 = params[2]->value;
  const auto& b2 = params[3]->value;
  std::vector<double> h(static_cast<std::size_t>(w1.dim(0)));
  for (int o = 0; o < w1.dim(0); ++o) {
    double acc = b1[o];
    for (int i = 0; i < w1.dim(1); ++i) acc += static_cast<double>(w1[o * w1.dim(1) + i]) * x[i];
    h[o] = std::max(acc, 0.0);
  }
  std::vector<double> y(static_cast<std::size_t>(w2.dim(0)));
  for (int o = 0; o < w2.dim(0); ++o) {
    double acc = b2[o];
    for (int i = 0; i < w2.dim(1); ++i) acc += static_cast<double>(w2[o * w2.dim(1) + i]) * h[i];
    y[o] = acc;
  }
  return y;
}

std::vector<double> head_input(const LatentState& s) {
  std::vector<double> x;
  for (float m : s.mu) x.push_back(m);
  for (float l : s.logvar) x.push_back(std::exp(static_cast<double>(l)));
  return x;
}

void set_output_bias(Mlp<float>& net, const std::vector<float>& bias) {
  auto& out = net.output_layer();
  out.weight.value.fill(0.f);
  for (std::size_t i = 0; i < bias.size(); ++i) out.bias.value[i] = bias[i];
}

std::vector<nn::Tensor<float>> values_of(const nn::StateRefs<float>& s) {
  std::vector<nn::Tensor<float>> out;
  for (const auto& [name, t] : s.named()) out.push_back(*t);
  return out;
}

}  // namespace

TEST_CASE("efe targets match a hand computation on a three-step episode") {
  DaifAgent agent(tiny_config(), 17);
  // perturb the target so it differs from the online value net
  for (auto* p : agent.value_target_net().state().params)
    for (float& v : p->value.values()) v *= 1.3f;

  std::vector<LatentState> x{latent({0.1f, -0.4f, 0.8f, 0.0f}, {0.0f, -0.5f, 0.3f, 0.1f}),
                             latent({0.3f, 0.2f, -0.1f, 0.5f}, {-0.2f, 0.0f, 0.2f, -0.4f}),
                             latent({-0.6f, 0.1f, 0.4f, -0.3f}, {0.4f, 0.1f, -0.3f, 0.0f}),
                             latent({0.2f, 0.9f, -0.7f, 0.2f}, {-0.1f, 0.3f, 0.0f, 0.2f})};
  const std::vector<int> a{5, 2, 8};
  const std::vector<float> r{4.9f, -0.1f, 1.5f};
  std::vector<LatentTransition> episode;
  for (int k = 0; k < 3; ++k) episode.push_back({x[k], a[k], r[k], x[k + 1], k == 2, 0.f});
  std::vector<const LatentTransition*> batch;
  for (const auto& t : episode) batch.push_back(&t);

  const std::vector<float> got = agent.efe_targets(batch);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> tin = head_input(x[k]);
    tin.push_back(a[k] / 10.0);
    const std::vector<double> s_hat = mlp_oracle(agent.transition_net(), tin);
    double kl = 0;
    for (int d = 0; d < 4; ++d) {
      const double lv = x[k + 1].logvar[d];
      const double diff = s_hat[d] - x[k + 1].mu[d];
      kl += 0.5 * (lv + (1 + diff * diff) / std::exp(lv) - 1);
    }
    double expected = -r[k] + kl;
    if (k < 2) {
      const std::vector<double> logits = mlp_oracle(agent.policy_net(), head_input(x[k + 1]));
      const std::vector<double> g = mlp_oracle(agent.value_target_net(), head_input(x[k + 1]));
      double top = *std::max_element(logits.begin(), logits.end()), z = 0, eg = 0;
      for (double l : logits) z += std::exp(l - top);
      for (int i = 0; i < 11; ++i) eg += std::exp(logits[i] - top) / z * g[i];
      expected += 0.99 * eg;
    }
    INFO("step " << k);
    CHECK(std::abs(got[k] - expected) <= 1e-5 * std::max(1.0, std::abs(expected)));
  }
}

TEST_CASE("policy is a distribution and uniform with a zero output layer") {
  DaifAgent agent(tiny_config(), 1);
  const LatentState s = latent({0.5f, -1.f, 2.f, 0.f}, {0.f, 0.f, 1.f, -1.f});
  const auto q = agent.policy(s);
  REQUIRE(q.size() == 11u);
  double total = 0;
  for (float p : q) {
    CHECK(p > 0.f);
    total += p;
  }
  CHECK(std::abs(total - 1.0) < 1e-6);
  set_output_bias(agent.policy_net(), std::vector<float>(11, 0.f));
  for (float p : agent.policy(s)) CHECK(p == doctest::Approx(1.0 / 11).epsilon(1e-6));
  CHECK(agent.select_action(s, ActMode::eval) == 0);  // ties go to the lowest index
  CHECK(agent.predict_next(s, 3).size() == 4u);
  CHECK(agent.efe(s).size() == 11u);
}

TEST_CASE("action selection modes") {
  DaifAgent agent(tiny_config(), 2);
  const LatentState s = latent({0.f, 0.f, 0.f, 0.f}, {0.f, 0.f, 0.f, 0.f});
  std::vector<float> bias(11, -60.f);
  bias[3] = 60.f;
  set_output_bias(agent.policy_net(), bias);
  CHECK(agent.select_action(s, ActMode::eval) == 3);
  for (int i = 0; i < 100; ++i) REQUIRE(agent.select_action(s, ActMode::train) == 3);

  const std::vector<double> q{0.3, 0.05, 0.05, 0.1, 0.02, 0.18, 0.1, 0.05, 0.05, 0.05, 0.05};
  std::vector<float> logq;
  for (double p : q) logq.push_back(static_cast<float>(std::log(p)));
  DaifAgent sampler(tiny_config(), 2);
  DaifAgent twin(tiny_config(), 2);
  set_output_bias(sampler.policy_net(), logq);
  set_output_bias(twin.policy_net(), logq);
  std::array<int, 11> counts{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const int a = sampler.select_action(s, ActMode::train);
    REQUIRE(a == twin.select_action(s, ActMode::train));
    ++counts[a];
  }
  for (int a = 0; a < 11; ++a) CHECK(std::abs(counts[a] / double(draws) - q[a]) < 0.01);
  CHECK(sampler.select_action(s, ActMode::eval) == 0);
}

TEST_CASE("learn leaves a frozen VAE bit-identical and moves the heads") {
  DaifAgent agent(tiny_config(), 3);
  agent.freeze_vae();
  const auto vae_before = values_of(agent.vae().state());
  const auto trans_before = values_of(agent.transition_net().state());
  const auto policy_before = values_of(agent.policy_net().state());
  const auto value_before = values_of(agent.value_net().state());
  const auto target_before = values_of(agent.value_target_net().state());

  std::vector<data::Transition> transitions;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  auto random_obs = [&]() {
    auto o = std::make_shared<data::Observation>();
    for (float& v : o->values) v = u(rng);
    return data::ObservationPtr(o);
  };
  for (int i = 0; i < 4; ++i) {
    data::ObservationStack s = data::ObservationStack::filled(random_obs());
    transitions.push_back({s, i * 2, 1.f * i, s.pushed(random_obs()), i == 3});
  }
  std::vector<const data::Transition*> batch;
  for (const auto& t : transitions) batch.push_back(&t);
  const DaifLosses losses = agent.learn_stacks(batch);
  CHECK(losses.applied);
  CHECK(losses.vae > 0.0);
  CHECK(losses.total == doctest::Approx(losses.vae + losses.transition + losses.policy));
  CHECK(values_of(agent.vae().state()) == vae_before);
  CHECK(values_of(agent.transition_net().state()) != trans_before);
  CHECK(values_of(agent.policy_net().state()) != policy_before);
  CHECK(values_of(agent.value_net().state()) != value_before);
  CHECK(values_of(agent.value_target_net().state()) == target_before);
}

TEST_CASE("stack and latent learn paths agree") {
  DaifConfig cfg = tiny_config();
  cfg.report_vae_loss = false;
  DaifAgent a(cfg, 9), b(cfg, 9);
  a.freeze_vae();
  b.freeze_vae();
  std::vector<data::Transition> transitions;
  for (int i = 0; i < 4; ++i) {
    auto o = std::make_shared<data::Observation>();
    o->values.fill(0.1f * i);
    auto o2 = std::make_shared<data::Observation>();
    o2->values.fill(0.05f * i + 0.3f);
    const auto s = data::ObservationStack::filled(o);
    transitions.push_back({s, i, 0.5f, s.pushed(o2), false});
  }
  std::vector<const data::Transition*> stack_batch;
  std::vector<LatentTransition> latents;
  for (const auto& t : transitions) {
    stack_batch.push_back(&t);
    latents.push_back({b.encode(t.state, false).latent, t.action, t.reward, b.encode(t.next, false).latent, t.done, 0.f});
  }
  std::vector<const LatentTransition*> latent_batch;
  for (const auto& t : latents) latent_batch.push_back(&t);
  const DaifLosses la = a.learn_stacks(stack_batch);
  const DaifLosses lb = b.learn(latent_batch);
  CHECK(la.transition == doctest::Approx(lb.transition).epsilon(1e-6));
  CHECK(la.policy == doctest::Approx(lb.policy).epsilon(1e-6));
  CHECK(la.value == doctest::Approx(lb.value).epsilon(1e-6));
}

TEST_CASE("all-zero losses leave every parameter unchanged") {
  DaifAgent agent(tiny_config(), 5);
  set_output_bias(agent.transition_net(), std::vector<float>(4, 0.f));
  set_output_bias(agent.policy_net(), std::vector<float>(11, 0.f));
  set_output_bias(agent.value_net(), std::vector<float>(11, 0.f));
  agent.sync_target();
  const LatentState zero = latent({0.f, 0.f, 0.f, 0.f}, {0.f, 0.f, 0.f, 0.f});
  const LatentTransition t{zero, 4, 0.f, zero, false, 0.f};
  const auto before = values_of(agent.transition_net().state());
  const auto pbefore = values_of(agent.policy_net().state());
  const auto vbefore = values_of(agent.value_net().state());
  const DaifLosses l = agent.learn({&t, &t});
  CHECK(l.applied);
  CHECK(l.transition == 0.0);
  CHECK(std::abs(l.policy) < 1e-7);
  CHECK(l.value == 0.0);
  CHECK(values_of(agent.transition_net().state()) == before);
  CHECK(values_of(agent.policy_net().state()) == pbefore);
  CHECK(values_of(agent.value_net().state()) == vbefore);
}

TEST_CASE("non-finite losses abort the step") {
  DaifAgent agent(tiny_config(), 6);
  const auto before = values_of(agent.policy_net().state());
  const LatentState s = latent({0.f, 0.f, 0.f, 0.f}, {0.f, 0.f, 0.f, 0.f});
  const LatentTransition t{s, 1, std::numeric_limits<float>::quiet_NaN(), s, false, 0.f};
  const DaifLosses l = agent.learn({&t});
  CHECK_FALSE(l.applied);
  CHECK(values_of(agent.policy_net().state()) == before);
}

TEST_CASE("target value net follows the online net every freeze period") {
  DaifConfig cfg = tiny_config();
  cfg.batch_size = 2;
  DaifAgent agent(cfg, 7);
  const LatentState s = latent({0.1f, 0.2f, 0.3f, 0.4f}, {0.f, 0.f, 0.f, 0.f});
  for (int i = 0; i < 4; ++i) agent.remember({s, i, 1.f, s, false, 0.f});
  auto target = values_of(agent.value_target_net().state());
  for (int step = 1; step <= 120; ++step) {
    const auto losses = agent.on_env_step();
    REQUIRE(losses.has_value());
    if (step % 50 == 0) {
      REQUIRE(values_of(agent.value_target_net().state()) == values_of(agent.value_net().state()));
      target = values_of(agent.value_target_net().state());
    } else {
      REQUIRE(values_of(agent.value_target_net().state()) == target);
    }
  }
}

TEST_CASE("value network learns negative reward when beta = 0 and kl = 0") {
  // two-step synthetic episode, targets from efe_target with the degenerate settings
  Mlp<float> value("value", 8, 16, 11);
  std::mt19937_64 rng(3);
  value.init(rng);
  nn::OptimizerConfig oc;
  oc.learning_rate = 1e-2;
  nn::Optimizer<float> opt(value.state().params, oc);
  const std::vector<double> zeros(11, 0.0), uniform(11, 1.0 / 11);
  nn::Tensor<float> x(nn::Shape{2, 8}, std::vector<float>{1, 0, 0, 1, 1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1});
  const std::vector<int> actions{5, 8};
  const std::vector<double> rewards{4.9, -0.1};
  nn::Tensor<float> targets(nn::Shape{2});
  for (int k = 0; k < 2; ++k) targets[k] = static_cast<float>(efe_target(rewards[k], 0.0, uniform, zeros, k == 1, 0.0));
  CHECK(targets[0] == doctest::Approx(-4.9));
  CHECK(targets[1] == doctest::Approx(0.1));
  for (int it = 0; it < 800; ++it) {
    nn::Tape<float> t;
    opt.step(t.backward(value_loss(t, value.forward(t, t.constant(x)), actions, targets)));
  }
  nn::Tape<float> t(false);
  const auto g = t.value(value.forward(t, t.constant(x)));
  CHECK(g[5] == doctest::Approx(-4.9).epsilon(1e-2));
  CHECK(g[11 + 8] == doctest::Approx(0.1).epsilon(2e-2));
}

TEST_CASE("two-state POMDP: the policy settles on the optimal action") {
  DaifConfig cfg = tiny_config();
  cfg.hidden = 16;
  cfg.lr_policy = 3e-3;
  cfg.lr_value = 3e-3;
  cfg.lr_transition = 3e-3;
  cfg.batch_size = 32;
  cfg.memory_capacity = 2000;
  cfg.freeze_period = 20;
  DaifAgent agent(cfg, 11);
  // two latent states; action 5 pays in state 0 and action 8 in state 1; next state is random
  const std::array<LatentState, 2> states{latent({1.f, 0.f, 0.5f, 0.f}, {0.f, 0.f, 0.f, 0.f}),
                                          latent({-1.f, 0.5f, 0.f, 1.f}, {0.f, 0.f, 0.f, 0.f})};
  const std::array<int, 2> best{5, 8};
  std::mt19937_64 rng(12);
  int s = 0;
  for (int step = 0; step < 3000; ++step) {
    const int a = agent.select_action(states[s], ActMode::train);
    const float r = a == best[s] ? 1.f : 0.f;
    const int next = static_cast<int>(rng() % 2);
    agent.remember({states[s], a, r, states[next], false, 0.f});
    agent.on_env_step();
    s = next;
  }
  for (int k = 0; k < 2; ++k) {
    const auto q = agent.policy(states[k]);
    INFO("state " << k << " p(best) = " << q[best[k]]);
    CHECK(q[best[k]] > 0.9f);
    CHECK(agent.select_action(states[k], ActMode::eval) == best[k]);
  }
}

TEST_CASE("checkpoint round trip keeps the frozen marker") {
  DaifAgent a(tiny_config(), 1), b(tiny_config(), 2);
  a.freeze_vae();
  const nn::NamedTensors snap = a.snapshot();
  CHECK(nn::has_prefix(snap, "vae.enc."));
  CHECK(nn::has_prefix(snap, "vae.dec."));
  CHECK(nn::has_prefix(snap, "trans."));
  CHECK(nn::has_prefix(snap, "policy."));
  CHECK(nn::has_prefix(snap, "value."));
  CHECK(nn::has_prefix(snap, "value_target."));
  b.restore(snap);
  CHECK(b.vae_frozen());
  CHECK(values_of(b.policy_net().state()) == values_of(a.policy_net().state()));
  CHECK(values_of(b.vae().state()) == values_of(a.vae().state()));

  DaifAgent c(tiny_config(), 3);
  c.restore(snap, true);
  CHECK(values_of(c.vae().state()) == values_of(a.vae().state()));
  CHECK(values_of(c.policy_net().state()) != values_of(a.policy_net().state()));
}
