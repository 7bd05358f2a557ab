#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "fepr/agent/daif.hpp"
#include "fepr/agent/dqn.hpp"
#include "fepr/env/config.hpp"
#include "fepr/env/driver.hpp"

namespace fepr::train {

enum class AgentKind { daif, dqn, random };

struct PretrainConfig {
  int epochs = 20;
  double learning_rate = 5e-6;
  int batch_size = 32;
  double holdout_fraction = 0.1;  // trailing share of the recording kept for evaluation
  double stop_at_drop = 0.0;      // stop early once held-out BCE fell by this fraction; 0 = never
};

struct RunConfig {
  std::uint64_t seed = 0;
  int episodes = 1000;
  int max_steps = 1000;  // overrides env.max_steps
  AgentKind agent = AgentKind::daif;
  env::EnvConfig env;
  agent::DaifConfig daif;
  agent::DqnConfig dqn;
  PretrainConfig pretrain;
  env::DriverConfig driver;
  std::string vae_checkpoint;  // required for daif training
  std::string out_dir = "runs/default";
  int checkpoint_every = 50;
  int eval_episodes = 100;
  bool record_wall_time = true;  // false writes wall_ms = 0, keeping the CSV byte-reproducible
  bool log_losses = true;

  // env config with max_steps applied
  env::EnvConfig effective_env() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

void validate(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

std::string to_string(AgentKind kind);

// Independent env seeds per (run seed, stream, episode); stream 0 trains, 1 evaluates.
std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t stream, std::uint64_t episode);

}  // namespace fepr::train
