#include <doctest.h>

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "fepr/agent/dqn.hpp"
#include "fepr/agent/losses.hpp"
#include "fepr/errors.hpp"
#include "support/gradcheck.hpp"

using namespace fepr;
using namespace fepr::agent;
using fepr::testing::check_gradients;
using fepr::testing::fill_uniform;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

DqnConfig tiny_config() {
  DqnConfig c;
  c.net.channels = {4, 4, 8};
  c.net.hidden = 8;
  c.batch_size = 4;
  c.memory_capacity = 64;
  return c;
}

data::ObservationPtr random_obs(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  auto o = std::make_shared<data::Observation>();
  for (float& v : o->values) v = u(rng);
  return o;
}

std::vector<data::Transition> random_transitions(int n, std::mt19937_64& rng) {
  std::vector<data::Transition> out;
  for (int i = 0; i < n; ++i) {
    const auto s = data::ObservationStack::filled(random_obs(rng));
    out.push_back({s, i % 11, 0.5f * i, s.pushed(random_obs(rng)), i % 3 == 2});
  }
  return out;
}

std::vector<const data::Transition*> pointers(const std::vector<data::Transition>& ts) {
  std::vector<const data::Transition*> out;
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

nn::Parameter<float>& param(QNetwork<float>& net, const std::string& name) {
  for (nn::Parameter<float>* p : net.state().params) {
    if (p->name == name) return *p;
  }
  throw std::logic_error("no parameter " + name);
}

std::vector<nn::Tensor<float>> values_of(const nn::StateRefs<float>& s) {
  std::vector<nn::Tensor<float>> out;
  for (const auto& [name, t] : s.named()) out.push_back(*t);
  return out;
}

}  // namespace

TEST_CASE("q network layer shapes at full width") {
  QNetwork<float> net;
  const auto rows = net.layer_shapes();
  const std::vector<std::pair<std::string, Shape>> expected = {
      {"conv", {1, 64, 20, 20}},  {"batchnorm", {1, 64, 20, 20}},  {"maxpool", {1, 64, 10, 10}},
      {"relu", {1, 64, 10, 10}},  {"conv", {1, 128, 4, 4}},        {"batchnorm", {1, 128, 4, 4}},
      {"maxpool", {1, 128, 2, 2}}, {"relu", {1, 128, 2, 2}},        {"conv", {1, 256, 1, 1}},
      {"relu", {1, 256, 1, 1}},   {"dense", {1, 512}},             {"dense", {1, 11}}};
  REQUIRE(rows.size() == expected.size());
  CHECK(rows.front().input == Shape{1, 8, 42, 42});
  CHECK(rows[10].input == Shape{1, 256});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    INFO(i);
    CHECK(rows[i].type == expected[i].first);
    CHECK(rows[i].output == expected[i].second);
  }
}

TEST_CASE("q network rejects malformed input") {
  QNetwork<float> net(tiny_config().net);
  Tape<float> t(false);
  CHECK_THROWS_AS(net.forward(t, t.constant(Tensor<float>(Shape{1, 7, 42, 42})), false), ConfigError);
  CHECK_THROWS_AS(net.forward(t, t.constant(Tensor<float>(Shape{1, 8, 40, 42})), false), ConfigError);
}

TEST_CASE("epsilon schedule") {
  const DqnConfig c;
  CHECK(epsilon_for_episode(c, 0) == doctest::Approx(0.15));
  CHECK(epsilon_for_episode(c, 100) == doctest::Approx(0.135));
  CHECK(epsilon_for_episode(c, 666) == doctest::Approx(0.0501));
  CHECK(epsilon_for_episode(c, 667) == doctest::Approx(0.05));
  CHECK(epsilon_for_episode(c, 100000) == doctest::Approx(0.05));
  double prev = 1.0;
  for (int e = 0; e < 2000; ++e) {
    const double eps = epsilon_for_episode(c, e);
    CHECK(eps <= prev);
    CHECK(eps >= 0.05);
    CHECK(eps <= 0.15);
    prev = eps;
  }
  CHECK_THROWS_AS(epsilon_for_episode(c, -1), ContractError);
}

TEST_CASE("config json round trip and validation") {
  DqnConfig c = tiny_config();
  c.learning_rate = 3e-4;
  c.epsilon_decay = 0.001;
  const nlohmann::json j = c;
  const DqnConfig back = j.get<DqnConfig>();
  CHECK(nlohmann::json(back) == j);
  DqnConfig bad = c;
  bad.net.actions = 5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = c;
  bad.discount = 1.5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = c;
  bad.memory_capacity = 2;
  CHECK_THROWS_AS(DqnAgent{bad}, ConfigError);
}

TEST_CASE("greedy action is argmax q and eval is deterministic") {
  DqnAgent agent(tiny_config(), 1);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const auto s = data::ObservationStack::filled(random_obs(rng));
    const auto q = agent.q_values(s);
    REQUIRE(q.size() == 11);
    CHECK(agent.q_values(s) == q);
    const int a = agent.select_action(s, 0.0);
    for (float v : q) CHECK(q[static_cast<std::size_t>(a)] >= v);
  }
  // ties resolve to the lowest index
  auto& fc2 = param(agent.online(), "q.fc2.weight");
  fc2.value.fill(0.f);
  param(agent.online(), "q.fc2.bias").value.fill(0.f);
  param(agent.online(), "q.fc2.bias").value[3] = 1.f;
  param(agent.online(), "q.fc2.bias").value[7] = 1.f;
  CHECK(agent.select_action(data::ObservationStack::filled(random_obs(rng)), 0.0) == 3);
}

TEST_CASE("epsilon one gives uniform actions") {
  DqnAgent agent(tiny_config(), 5);
  std::mt19937_64 rng(6);
  const auto s = data::ObservationStack::filled(random_obs(rng));
  std::array<int, 11> counts{};
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(agent.select_action(s, 1.0))];
  double chi2 = 0.0;
  const double expected = draws / 11.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 10 dof, p = 0.001
  CHECK(chi2 < 29.59);
}

TEST_CASE("q targets") {
  DqnAgent agent(tiny_config(), 7);
  auto& w = param(agent.target(), "q_target.fc2.weight");
  auto& b = param(agent.target(), "q_target.fc2.bias");
  w.value.fill(0.f);
  b.value.fill(-3.f);
  b.value[4] = 10.f;
  std::mt19937_64 rng(8);
  const auto s = data::ObservationStack::filled(random_obs(rng));
  const data::Transition live{s, 2, 0.f, s.pushed(random_obs(rng)), false};
  const data::Transition terminal{s, 2, 1.5f, s.pushed(random_obs(rng)), true};
  const data::Transition rewarded{s, 2, -2.f, s.pushed(random_obs(rng)), false};
  const auto y = agent.q_targets({&live, &terminal, &rewarded});
  CHECK(y[0] == doctest::Approx(9.9));
  CHECK(y[1] == doctest::Approx(1.5));
  CHECK(y[2] == doctest::Approx(-2.0 + 9.9));
}

TEST_CASE("learn moves only the online net and targets hold within the sync window") {
  DqnConfig cfg = tiny_config();
  cfg.learning_rate = 1e-3;
  DqnAgent agent(cfg, 9);
  std::mt19937_64 rng(10);
  const auto ts = random_transitions(4, rng);
  const auto batch = pointers(ts);
  const auto online_before = values_of(agent.online().state());
  const auto target_before = values_of(agent.target().state());
  const auto y0 = agent.q_targets(batch);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 40; ++i) {
    const DqnLoss l = agent.learn(batch);
    REQUIRE(l.applied);
    if (i == 0) first = l.loss;
    last = l.loss;
  }
  CHECK(last < first);
  CHECK(values_of(agent.online().state()) != online_before);
  CHECK(values_of(agent.target().state()) == target_before);
  CHECK(agent.q_targets(batch) == y0);
}

TEST_CASE("non-finite loss aborts the step") {
  DqnAgent agent(tiny_config(), 11);
  std::mt19937_64 rng(12);
  auto ts = random_transitions(4, rng);
  ts[1].reward = std::numeric_limits<float>::quiet_NaN();
  const auto before = values_of(agent.online().state());
  const DqnLoss l = agent.learn(pointers(ts));
  CHECK_FALSE(l.applied);
  CHECK(values_of(agent.online().state()) == before);
}

TEST_CASE("target syncs every freeze_period env steps") {
  DqnConfig cfg = tiny_config();
  cfg.learning_rate = 1e-3;
  DqnAgent agent(cfg, 13);
  std::mt19937_64 rng(14);
  for (auto& t : random_transitions(8, rng)) agent.remember(t);
  for (int step = 1; step <= 120; ++step) {
    const auto target_before = values_of(agent.target().state());
    REQUIRE(agent.on_env_step().has_value());
    const bool synced = values_of(agent.target().state()) != target_before;
    INFO(step);
    CHECK(synced == (step % 50 == 0));
    if (step % 50 == 0) CHECK(values_of(agent.target().state()) == values_of(agent.online().state()));
  }
}

TEST_CASE("checkpoint prefixes and restore") {
  DqnAgent a(tiny_config(), 15), b(tiny_config(), 16);
  const nn::NamedTensors snap = a.snapshot();
  bool saw_q = false, saw_target = false;
  for (const auto& [name, t] : snap) {
    const bool q = name.rfind("q.", 0) == 0;
    const bool qt = name.rfind("q_target.", 0) == 0;
    CHECK((q || qt));
    saw_q |= q;
    saw_target |= qt;
  }
  CHECK(saw_q);
  CHECK(saw_target);
  b.restore(snap);
  std::mt19937_64 rng(17);
  const auto s = data::ObservationStack::filled(random_obs(rng));
  CHECK(a.q_values(s) == b.q_values(s));
}

TEST_CASE("q loss gradients through a tiny q network") {
  QNetConfig cfg;
  cfg.channels = {2, 3, 4};
  cfg.hidden = 5;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(50 + seed);
    QNetwork<double> net(cfg);
    net.init(rng);
    Tensor<double> x(Shape{3, 8, 42, 42});
    fill_uniform(x, rng, 0.0, 1.0);
    const Tensor<double> y(Shape{3}, std::vector<double>{0.5, -1.0, 2.0});
    const std::vector<int> actions{0, 4, 10};
    auto r = check_gradients(net.state().params, [&](Tape<double>& t) {
      // conv biases ahead of batch norm have zero gradient; scaling keeps round-off under the 1e-6 floor
      return nn::scale(t, value_loss(t, net.forward(t, t.constant(x), true), actions, y), 1e-2);
    }, 1e-5, 24);
    INFO(r.worst);
    CHECK(r.max_relative_error < 1e-4);
  }
}
