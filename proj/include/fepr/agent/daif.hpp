#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fepr/agent/acting.hpp"
#include "fepr/agent/mlp.hpp"
#include "fepr/agent/vae.hpp"
#include "fepr/data/observation.hpp"
#include "fepr/data/replay.hpp"
#include "fepr/data/target_sync.hpp"
#include "fepr/nn/checkpoint.hpp"
#include "fepr/nn/optimizer.hpp"

namespace fepr::agent {

struct DaifConfig {
  VaeConfig vae;
  int hidden = 512;
  int actions = 11;
  double gamma = 12.0;   // precision of the Boltzmann prior over EFE
  double beta = 0.99;    // EFE discount
  double alpha = 18000;  // the VAE term is divided by this
  double lr_transition = 1e-3;
  double lr_policy = 1e-4;
  double lr_value = 1e-5;
  double lr_vae = 5e-6;
  int batch_size = 250;
  std::size_t memory_capacity = 100000;
  int freeze_period = 50;
  int learn_every = 1;  // environment steps per learn step
  // Decoding every stack just to report the frozen VAE term is costly; off drops it to 0.
  bool report_vae_loss = true;
};

void to_json(nlohmann::json& j, const DaifConfig& c);
void from_json(const nlohmann::json& j, DaifConfig& c);
void validate(const DaifConfig& c);

struct LatentState {
  std::vector<float> mu;
  std::vector<float> logvar;
};

// Replay item for the agent. The VAE is frozen while the agent learns, so the encoder
// output for a stack never changes and can be stored instead of the stack itself.
struct LatentTransition {
  LatentState state;
  int action = 0;
  float reward = 0.f;
  LatentState next;
  bool done = false;
  float vae_loss = 0.f;  // loss of the stack behind `state`, unscaled
};

struct DaifLosses {
  double vae = 0.0;  // already divided by alpha
  double transition = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double total = 0.0;  // vae + transition + policy
  bool applied = false;
};

void to_json(nlohmann::json& j, const DaifLosses& l);

struct Encoding {
  LatentState latent;
  float vae_loss = 0.f;
};

class DaifAgent {
 public:
  explicit DaifAgent(DaifConfig config, std::uint64_t seed = 0);
  DaifAgent(const DaifAgent&) = delete;
  DaifAgent& operator=(const DaifAgent&) = delete;

  const DaifConfig& config() const { return config_; }
  int latent() const { return config_.vae.latent; }

  // Encodes with eval-mode batch norm. The VAE term, when requested, decodes a
  // reparametrised draw; the latent state handed to the heads is always (mu, logvar).
  Encoding encode(const data::ObservationStack& stack, bool with_vae_loss);
  std::vector<Encoding> encode_batch(const std::vector<const data::ObservationStack*>& stacks, bool with_vae_loss);

  std::vector<float> policy(const LatentState& s);
  std::vector<float> efe(const LatentState& s);
  std::vector<float> predict_next(const LatentState& s, int action);
  int select_action(const LatentState& s, ActMode mode);

  // One learn step on a latent batch: transition MSE, policy KL against the Boltzmann
  // prior over the online EFE, and the value MSE against the bootstrapped target.
  // Returns applied = false (and leaves every parameter untouched) on a non-finite loss.
  DaifLosses learn(const std::vector<const LatentTransition*>& batch);
  // -r + KL[N(s_hat, I) || q(s | o_next)] + beta * E_policy(next)[G_target(next)] per item,
  // with s_hat the transition net's prediction from (state, action).
  std::vector<float> efe_targets(const std::vector<const LatentTransition*>& batch);
  DaifLosses learn_stacks(const std::vector<const data::Transition*>& batch);

  // Replay plumbing used by the training loop.
  void remember(LatentTransition t) { memory_.push(std::move(t)); }
  const data::ReplayMemory<LatentTransition>& memory() const { return memory_; }
  // Counts an environment step: syncs the target every freeze_period steps and learns
  // every learn_every steps once the memory holds a batch.
  std::optional<DaifLosses> on_env_step();

  void sync_target();
  bool vae_frozen() const { return vae_frozen_; }
  void freeze_vae();

  Vae<float>& vae() { return vae_; }
  Mlp<float>& transition_net() { return transition_; }
  Mlp<float>& policy_net() { return policy_; }
  Mlp<float>& value_net() { return value_; }
  Mlp<float>& value_target_net() { return value_target_; }
  std::mt19937_64& rng() { return rng_; }

  // Checkpoint tensors with prefixes vae.enc, vae.dec, trans, policy, value, value_target.
  nn::NamedTensors snapshot();
  // Loads a full agent checkpoint, or just the VAE when vae_only is set.
  void restore(const nn::NamedTensors& tensors, bool vae_only = false);

 private:
  nn::Tensor<float> latent_matrix(const std::vector<const LatentState*>& states, bool logvar) const;
  nn::StateRefs<float> agent_state();

  DaifConfig config_;
  std::mt19937_64 rng_;
  Vae<float> vae_;
  Mlp<float> transition_;
  Mlp<float> policy_;
  Mlp<float> value_;
  Mlp<float> value_target_;
  nn::Optimizer<float> opt_transition_;
  nn::Optimizer<float> opt_policy_;
  nn::Optimizer<float> opt_value_;
  data::ReplayMemory<LatentTransition> memory_;
  data::TargetSync target_sync_;
  std::int64_t env_steps_ = 0;
  bool vae_frozen_ = false;
};

// Marker stored in checkpoints whose VAE was frozen after pre-training.
inline constexpr const char* kVaeFrozenMarker = "vae.frozen";

}  // namespace fepr::agent
