#include "fepr/agent/dqn.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fepr/agent/losses.hpp"
#include "fepr/errors.hpp"

namespace fepr::agent {

using nn::Tape;
using nn::Tensor;
using nn::Var;

template <typename T>
QNetwork<T>::QNetwork(QNetConfig config, const std::string& prefix) : config_(config) {
  const auto& ch = config_.channels;
  for (int c : ch) {
    if (c <= 0) throw ConfigError("q network channel widths must be positive");
  }
  if (config_.hidden <= 0 || config_.actions <= 0) throw ConfigError("q network sizes must be positive");
  conv1_ = nn::Conv2d<T>(prefix + ".conv1", config_.in_channels, ch[0], 4, 2);
  bn1_ = nn::BatchNorm2d<T>(prefix + ".bn1", ch[0]);
  conv2_ = nn::Conv2d<T>(prefix + ".conv2", ch[0], ch[1], 4, 2);
  bn2_ = nn::BatchNorm2d<T>(prefix + ".bn2", ch[1]);
  conv3_ = nn::Conv2d<T>(prefix + ".conv3", ch[1], ch[2], 2, 2);
  fc1_ = nn::Dense<T>(prefix + ".fc1", ch[2], config_.hidden);
  fc2_ = nn::Dense<T>(prefix + ".fc2", config_.hidden, config_.actions);
}

template <typename T>
void QNetwork<T>::init(std::mt19937_64& rng) {
  conv1_.init(rng);
  bn1_.init(rng);
  conv2_.init(rng);
  bn2_.init(rng);
  conv3_.init(rng);
  fc1_.init(rng);
  fc2_.init(rng);
}

template <typename T>
Var QNetwork<T>::traced(Tape<T>& tape, const char* type, Var in, Var out) {
  if (trace_) trace_->push_back({type, tape.shape(in), tape.shape(out)});
  return out;
}

template <typename T>
Var QNetwork<T>::forward(Tape<T>& tape, Var x, bool training) {
  const nn::Shape& in = tape.shape(x);
  if (in.size() != 4 || in[1] != config_.in_channels || in[2] != 42 || in[3] != 42) {
    throw ConfigError("q network expects (B, " + std::to_string(config_.in_channels) + ", 42, 42), got " +
                      nn::shape_string(in));
  }
  auto block = [&](nn::Conv2d<T>& conv, nn::BatchNorm2d<T>& bn, Var h) {
    h = traced(tape, "conv", h, conv.forward(tape, h));
    h = traced(tape, "batchnorm", h, bn.forward(tape, h, training));
    h = traced(tape, "maxpool", h, nn::maxpool2d(tape, h, 2, 2));
    return traced(tape, "relu", h, nn::relu(tape, h));
  };
  Var h = block(conv1_, bn1_, x);
  h = block(conv2_, bn2_, h);
  h = traced(tape, "conv", h, conv3_.forward(tape, h));
  h = traced(tape, "relu", h, nn::relu(tape, h));
  h = nn::reshape(tape, h, nn::Shape{in[0], config_.channels[2]});
  h = traced(tape, "dense", h, fc1_.forward(tape, h));
  return traced(tape, "dense", h, fc2_.forward(tape, h));
}

template <typename T>
nn::StateRefs<T> QNetwork<T>::state() {
  nn::StateRefs<T> s = conv1_.state();
  s.append(bn1_.state());
  s.append(conv2_.state());
  s.append(bn2_.state());
  s.append(conv3_.state());
  s.append(fc1_.state());
  s.append(fc2_.state());
  return s;
}

template <typename T>
std::vector<LayerShape> QNetwork<T>::layer_shapes() {
  std::vector<LayerShape> rows;
  trace_ = &rows;
  Tape<T> tape(false);
  forward(tape, tape.constant(Tensor<T>(nn::Shape{1, config_.in_channels, 42, 42})), false);
  trace_ = nullptr;
  return rows;
}

template class QNetwork<float>;
template class QNetwork<double>;

void to_json(nlohmann::json& j, const QNetConfig& c) {
  j = {{"channels", c.channels}, {"hidden", c.hidden}, {"actions", c.actions}, {"in_channels", c.in_channels}};
}

void from_json(const nlohmann::json& j, QNetConfig& c) {
  const QNetConfig d;
  c.channels = j.value("channels", d.channels);
  c.hidden = j.value("hidden", d.hidden);
  c.actions = j.value("actions", d.actions);
  c.in_channels = j.value("in_channels", d.in_channels);
}

void to_json(nlohmann::json& j, const DqnConfig& c) {
  j = {{"net", c.net},
       {"learning_rate", c.learning_rate},
       {"discount", c.discount},
       {"epsilon_start", c.epsilon_start},
       {"epsilon_min", c.epsilon_min},
       {"epsilon_decay", c.epsilon_decay},
       {"batch_size", c.batch_size},
       {"memory_capacity", c.memory_capacity},
       {"freeze_period", c.freeze_period},
       {"learn_every", c.learn_every}};
}

void from_json(const nlohmann::json& j, DqnConfig& c) {
  const DqnConfig d;
  c.net = j.value("net", d.net);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.discount = j.value("discount", d.discount);
  c.epsilon_start = j.value("epsilon_start", d.epsilon_start);
  c.epsilon_min = j.value("epsilon_min", d.epsilon_min);
  c.epsilon_decay = j.value("epsilon_decay", d.epsilon_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.memory_capacity = j.value("memory_capacity", d.memory_capacity);
  c.freeze_period = j.value("freeze_period", d.freeze_period);
  c.learn_every = j.value("learn_every", d.learn_every);
}

void validate(const DqnConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("dqn config: ") + what);
  };
  require(c.learning_rate > 0, "learning_rate must be positive");
  require(c.discount >= 0 && c.discount <= 1, "discount must lie in [0, 1]");
  require(c.epsilon_min >= 0 && c.epsilon_start >= c.epsilon_min && c.epsilon_start <= 1, "epsilon bounds invalid");
  require(c.epsilon_decay >= 0, "epsilon_decay must be non-negative");
  require(c.batch_size > 0, "batch_size must be positive");
  require(c.memory_capacity >= static_cast<std::size_t>(c.batch_size), "memory_capacity must hold one batch");
  require(c.freeze_period > 0 && c.learn_every > 0, "freeze_period and learn_every must be positive");
  require(c.net.actions == 11, "the action space has 11 entries");
}

double epsilon_for_episode(const DqnConfig& c, int episode) {
  if (episode < 0) throw ContractError("episode index must be non-negative");
  return std::max(c.epsilon_min, c.epsilon_start - c.epsilon_decay * episode);
}

namespace {

DqnConfig checked(DqnConfig c) {
  validate(c);
  return c;
}

}  // namespace

DqnAgent::DqnAgent(DqnConfig config, std::uint64_t seed)
    : config_(checked(std::move(config))),
      rng_(seed),
      online_(config_.net, "q"),
      target_(config_.net, "q_target"),
      memory_(config_.memory_capacity),
      target_sync_(config_.freeze_period) {
  online_.init(rng_);
  sync_target();
  nn::set_trainable(target_.state(), false);
  nn::OptimizerConfig oc;
  oc.learning_rate = config_.learning_rate;
  opt_ = nn::Optimizer<float>(online_.state().params, oc);
}

void DqnAgent::sync_target() { nn::copy_state(online_.state(), target_.state()); }

std::vector<float> DqnAgent::q_values(const data::ObservationStack& stack) {
  Tape<float> tape(false);
  const Tensor<float>& q = tape.value(online_.forward(tape, tape.constant(data::stack_tensor(stack)), false));
  return {q.values().begin(), q.values().end()};
}

int DqnAgent::select_action(const data::ObservationStack& stack, double epsilon) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (epsilon > 0.0 && coin(rng_) < epsilon) {
    std::uniform_int_distribution<int> pick(0, config_.net.actions - 1);
    return pick(rng_);
  }
  const std::vector<float> q = q_values(stack);
  return argmax<float>(q);
}

std::vector<float> DqnAgent::q_targets(const std::vector<const data::Transition*>& batch) {
  std::vector<const data::ObservationStack*> next;
  for (const data::Transition* t : batch) next.push_back(&t->next);
  Tape<float> tape(false);
  const Tensor<float>& q = tape.value(target_.forward(tape, tape.constant(data::stack_batch(next)), false));
  const int actions = q.dim(1);
  std::vector<float> y(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const float* row = q.data() + b * static_cast<std::size_t>(actions);
    const double best = *std::max_element(row, row + actions);
    y[b] = static_cast<float>(batch[b]->reward + (batch[b]->done ? 0.0 : config_.discount * best));
  }
  return y;
}

DqnLoss DqnAgent::learn(const std::vector<const data::Transition*>& batch) {
  if (batch.empty()) throw ConfigError("dqn learn: empty batch");
  std::vector<const data::ObservationStack*> now;
  std::vector<int> actions;
  for (const data::Transition* t : batch) {
    if (t->action < 0 || t->action >= config_.net.actions) throw std::out_of_range("dqn learn: action out of range");
    now.push_back(&t->state);
    actions.push_back(t->action);
  }
  const std::vector<float> y = q_targets(batch);
  // batch-norm running stats move during the forward pass; put them back if the step is dropped
  const nn::StateRefs<float> state = online_.state();
  std::vector<Tensor<float>> buffers;
  for (const auto& [name, t] : state.buffers) buffers.push_back(*t);
  Tape<float> tape;
  const Var q = online_.forward(tape, tape.constant(data::stack_batch(now)), true);
  const Var loss = value_loss(tape, q, actions, Tensor<float>(nn::Shape{static_cast<int>(batch.size())}, y));
  DqnLoss out;
  out.loss = tape.value(loss)[0];
  if (!std::isfinite(out.loss)) {
    spdlog::error("dqn learn: non-finite loss on a batch of {}; step skipped", batch.size());
    for (std::size_t i = 0; i < buffers.size(); ++i) *state.buffers[i].second = buffers[i];
    return out;
  }
  opt_.step(tape.backward(loss));
  out.applied = true;
  return out;
}

std::optional<DqnLoss> DqnAgent::on_env_step() {
  ++env_steps_;
  std::optional<DqnLoss> loss;
  if (env_steps_ % config_.learn_every == 0) {
    if (const auto batch = memory_.sample(static_cast<std::size_t>(config_.batch_size), rng_)) loss = learn(*batch);
  }
  if (target_sync_.tick()) sync_target();
  return loss;
}

nn::NamedTensors DqnAgent::snapshot() {
  nn::StateRefs<float> s = online_.state();
  s.append(target_.state());
  return nn::snapshot(s);
}

void DqnAgent::restore(const nn::NamedTensors& tensors) {
  nn::StateRefs<float> s = online_.state();
  s.append(target_.state());
  nn::restore(tensors, s);
}

}  // namespace fepr::agent
