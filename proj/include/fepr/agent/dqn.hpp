#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fepr/agent/acting.hpp"
#include "fepr/agent/vae.hpp"
#include "fepr/data/replay.hpp"
#include "fepr/data/target_sync.hpp"
#include "fepr/nn/checkpoint.hpp"
#include "fepr/nn/optimizer.hpp"

namespace fepr::agent {

struct QNetConfig {
  std::array<int, 3> channels{64, 128, 256};
  int hidden = 512;
  int actions = 11;
  int in_channels = 8;
};

// conv-bn-maxpool-relu, conv-bn-maxpool-relu, conv-relu, dense, dense.
template <typename T>
class QNetwork {
 public:
  explicit QNetwork(QNetConfig config = {}, const std::string& prefix = "q");
  QNetwork(const QNetwork&) = delete;
  QNetwork& operator=(const QNetwork&) = delete;

  void init(std::mt19937_64& rng);
  nn::Var forward(nn::Tape<T>& tape, nn::Var x, bool training);
  nn::StateRefs<T> state();
  const QNetConfig& config() const { return config_; }

  std::vector<LayerShape> layer_shapes();

 private:
  nn::Var traced(nn::Tape<T>& tape, const char* type, nn::Var in, nn::Var out);

  QNetConfig config_;
  nn::Conv2d<T> conv1_, conv2_, conv3_;
  nn::BatchNorm2d<T> bn1_, bn2_;
  nn::Dense<T> fc1_, fc2_;
  std::vector<LayerShape>* trace_ = nullptr;
};

struct DqnConfig {
  QNetConfig net;
  double learning_rate = 1e-5;
  double discount = 0.99;
  double epsilon_start = 0.15;
  double epsilon_min = 0.05;
  double epsilon_decay = 0.00015;  // per episode
  int batch_size = 250;
  std::size_t memory_capacity = 300000;
  int freeze_period = 50;
  int learn_every = 1;
};

void to_json(nlohmann::json& j, const QNetConfig& c);
void from_json(const nlohmann::json& j, QNetConfig& c);
void to_json(nlohmann::json& j, const DqnConfig& c);
void from_json(const nlohmann::json& j, DqnConfig& c);
void validate(const DqnConfig& c);

// max(epsilon_min, epsilon_start - epsilon_decay * episode); constant within an episode.
double epsilon_for_episode(const DqnConfig& c, int episode);

struct DqnLoss {
  double loss = 0.0;
  bool applied = false;
};

class DqnAgent {
 public:
  explicit DqnAgent(DqnConfig config, std::uint64_t seed = 0);
  DqnAgent(const DqnAgent&) = delete;
  DqnAgent& operator=(const DqnAgent&) = delete;

  const DqnConfig& config() const { return config_; }

  std::vector<float> q_values(const data::ObservationStack& stack);
  // With probability epsilon a uniform action, otherwise argmax Q (lowest index on ties).
  int select_action(const data::ObservationStack& stack, double epsilon);

  // y = r + (done ? 0 : discount * max_a Q_target(next, a)) per item.
  std::vector<float> q_targets(const std::vector<const data::Transition*>& batch);
  DqnLoss learn(const std::vector<const data::Transition*>& batch);

  void remember(data::Transition t) { memory_.push(std::move(t)); }
  const data::ReplayMemory<data::Transition>& memory() const { return memory_; }
  std::optional<DqnLoss> on_env_step();

  void sync_target();
  QNetwork<float>& online() { return online_; }
  QNetwork<float>& target() { return target_; }
  std::mt19937_64& rng() { return rng_; }

  nn::NamedTensors snapshot();
  void restore(const nn::NamedTensors& tensors);

 private:
  DqnConfig config_;
  std::mt19937_64 rng_;
  QNetwork<float> online_;
  QNetwork<float> target_;
  nn::Optimizer<float> opt_;
  data::ReplayMemory<data::Transition> memory_;
  data::TargetSync target_sync_;
  std::int64_t env_steps_ = 0;
};

}  // namespace fepr::agent
