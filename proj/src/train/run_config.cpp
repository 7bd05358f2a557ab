#include "fepr/train/run_config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "fepr/errors.hpp"

namespace fepr::env {

void to_json(nlohmann::json& j, const DriverConfig& c) {
  j = {{"lookahead_tiles", c.lookahead_tiles}, {"target_speed", c.target_speed}, {"epsilon", c.epsilon}};
}

void from_json(const nlohmann::json& j, DriverConfig& c) {
  const DriverConfig d;
  c.lookahead_tiles = j.value("lookahead_tiles", d.lookahead_tiles);
  c.target_speed = j.value("target_speed", d.target_speed);
  c.epsilon = j.value("epsilon", d.epsilon);
}

}  // namespace fepr::env

namespace fepr::train {

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::daif:
      return "daif";
    case AgentKind::dqn:
      return "dqn";
    case AgentKind::random:
      return "random";
  }
  return "?";
}

void to_json(nlohmann::json& j, const AgentKind& k) { j = to_string(k); }

// strict, unlike the enum macro which maps unknown names to the first entry
void from_json(const nlohmann::json& j, AgentKind& k) {
  const std::string s = j.get<std::string>();
  for (AgentKind candidate : {AgentKind::daif, AgentKind::dqn, AgentKind::random}) {
    if (s == to_string(candidate)) {
      k = candidate;
      return;
    }
  }
  throw ConfigError("unknown agent kind '" + s + "' (daif, dqn or random)");
}

env::EnvConfig RunConfig::effective_env() const {
  env::EnvConfig e = env;
  e.max_steps = max_steps;
  return e;
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"holdout_fraction", c.holdout_fraction},
       {"stop_at_drop", c.stop_at_drop}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  const PretrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.stop_at_drop = j.value("stop_at_drop", d.stop_at_drop);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"episodes", c.episodes},
       {"max_steps", c.max_steps},
       {"agent", c.agent},
       {"env", c.env},
       {"daif", c.daif},
       {"dqn", c.dqn},
       {"pretrain", c.pretrain},
       {"driver", c.driver},
       {"vae_checkpoint", c.vae_checkpoint},
       {"out_dir", c.out_dir},
       {"checkpoint_every", c.checkpoint_every},
       {"eval_episodes", c.eval_episodes},
       {"record_wall_time", c.record_wall_time},
       {"log_losses", c.log_losses}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  const RunConfig d;
  c.seed = j.value("seed", d.seed);
  c.episodes = j.value("episodes", d.episodes);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.agent = j.value("agent", d.agent);
  c.env = j.value("env", d.env);
  c.daif = j.value("daif", d.daif);
  c.dqn = j.value("dqn", d.dqn);
  c.pretrain = j.value("pretrain", d.pretrain);
  c.driver = j.value("driver", d.driver);
  c.vae_checkpoint = j.value("vae_checkpoint", d.vae_checkpoint);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.eval_episodes = j.value("eval_episodes", d.eval_episodes);
  c.record_wall_time = j.value("record_wall_time", d.record_wall_time);
  c.log_losses = j.value("log_losses", d.log_losses);
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("run config: ") + what);
  };
  require(c.episodes > 0, "episodes must be positive");
  require(c.max_steps > 0, "max_steps must be positive");
  require(c.checkpoint_every > 0, "checkpoint_every must be positive");
  require(c.eval_episodes > 0, "eval_episodes must be positive");
  require(c.pretrain.epochs >= 0, "pretrain.epochs must be >= 0");
  require(c.pretrain.learning_rate > 0, "pretrain.learning_rate must be positive");
  require(c.pretrain.batch_size > 0, "pretrain.batch_size must be positive");
  require(c.pretrain.holdout_fraction >= 0 && c.pretrain.holdout_fraction < 1, "pretrain.holdout_fraction must lie in [0, 1)");
  require(c.pretrain.stop_at_drop >= 0 && c.pretrain.stop_at_drop < 1, "pretrain.stop_at_drop must lie in [0, 1)");
  require(c.driver.lookahead_tiles > 0 && c.driver.epsilon >= 0 && c.driver.epsilon <= 1, "driver config invalid");
  env::validate(c.effective_env());
  agent::validate(c.daif);
  agent::validate(c.dqn);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  validate(c);
  return c;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << nlohmann::json(c).dump(2) << "\n";
}

std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t stream, std::uint64_t episode) {
  // splitmix64 over a mixed key
  std::uint64_t z = run_seed * 0x9E3779B97F4A7C15ULL + stream * 0xD1B54A32D192ED03ULL + episode + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace fepr::train
