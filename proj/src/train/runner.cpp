#include "fepr/train/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "fepr/agent/daif.hpp"
#include "fepr/agent/dqn.hpp"
#include "fepr/data/demo_file.hpp"
#include "fepr/data/observation.hpp"
#include "fepr/env/car_racing.hpp"
#include "fepr/errors.hpp"
#include "fepr/nn/checkpoint.hpp"

namespace fepr::train {

namespace fs = std::filesystem;

namespace {

using LossSink = std::function<void(const nlohmann::json&)>;

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void begin_episode(const data::ObservationStack& stack, int episode) = 0;
  virtual int act(bool greedy) = 0;
  // Records the transition from the current state and, when learning, lets the agent update.
  virtual void observe(int action, float reward, const data::ObservationStack& next, bool done, bool learn,
                       const LossSink& sink) = 0;
  virtual std::optional<nn::NamedTensors> snapshot() = 0;
  std::int64_t learn_steps = 0;
};

class DaifController : public Controller {
 public:
  DaifController(const RunConfig& config) : agent_(config.daif, config.seed) {}
  agent::DaifAgent& agent() { return agent_; }

  void begin_episode(const data::ObservationStack& stack, int) override {
    current_ = agent_.encode(stack, agent_.config().report_vae_loss);
  }
  int act(bool greedy) override {
    return agent_.select_action(current_.latent, greedy ? agent::ActMode::eval : agent::ActMode::train);
  }
  void observe(int action, float reward, const data::ObservationStack& next, bool done, bool learn,
               const LossSink& sink) override {
    agent::Encoding next_enc = agent_.encode(next, learn && agent_.config().report_vae_loss);
    if (learn) {
      agent_.remember({current_.latent, action, reward, next_enc.latent, done, current_.vae_loss});
      if (const auto losses = agent_.on_env_step()) {
        ++learn_steps;
        if (sink) sink(nlohmann::json(*losses));
      }
    }
    current_ = std::move(next_enc);
  }
  std::optional<nn::NamedTensors> snapshot() override { return agent_.snapshot(); }

 private:
  agent::DaifAgent agent_;
  agent::Encoding current_;
};

class DqnController : public Controller {
 public:
  DqnController(const RunConfig& config) : agent_(config.dqn, config.seed) {}
  agent::DqnAgent& agent() { return agent_; }

  void begin_episode(const data::ObservationStack& stack, int episode) override {
    current_ = stack;
    epsilon_ = agent::epsilon_for_episode(agent_.config(), episode);
  }
  int act(bool greedy) override { return agent_.select_action(current_, greedy ? 0.0 : epsilon_); }
  void observe(int action, float reward, const data::ObservationStack& next, bool done, bool learn,
               const LossSink& sink) override {
    if (learn) {
      agent_.remember({current_, action, reward, next, done});
      if (const auto loss = agent_.on_env_step()) {
        ++learn_steps;
        if (sink) sink(nlohmann::json{{"q_loss", loss->loss}, {"applied", loss->applied}, {"epsilon", epsilon_}});
      }
    }
    current_ = next;
  }
  std::optional<nn::NamedTensors> snapshot() override { return agent_.snapshot(); }

 private:
  agent::DqnAgent agent_;
  data::ObservationStack current_;
  double epsilon_ = 0.0;
};

class RandomController : public Controller {
 public:
  explicit RandomController(std::uint64_t seed) : rng_(seed) {}
  void begin_episode(const data::ObservationStack&, int) override {}
  int act(bool) override { return pick_(rng_); }
  void observe(int, float, const data::ObservationStack&, bool, bool, const LossSink&) override {}
  std::optional<nn::NamedTensors> snapshot() override { return std::nullopt; }

 private:
  std::mt19937_64 rng_;
  std::uniform_int_distribution<int> pick_{0, env::kNumActions - 1};
};

nn::NamedTensors load_checkpoint(const fs::path& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " checkpoint path is empty");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " checkpoint not found: " + path.string());
  return nn::read_checkpoint(path);
}

std::unique_ptr<Controller> make_controller(const RunConfig& config, const fs::path& checkpoint, bool training) {
  switch (config.agent) {
    case AgentKind::daif: {
      auto c = std::make_unique<DaifController>(config);
      if (training) {
        if (config.vae_checkpoint.empty()) {
          throw ConfigError("daif training needs a pre-trained VAE: set vae_checkpoint (see pretrain-vae)");
        }
        const nn::NamedTensors vae = load_checkpoint(config.vae_checkpoint, "VAE");
        if (!nn::has_prefix(vae, "vae.")) throw ConfigError("checkpoint " + config.vae_checkpoint + " holds no VAE tensors");
        c->agent().restore(vae, true);
        c->agent().freeze_vae();
      } else {
        c->agent().restore(load_checkpoint(checkpoint, "agent"));
      }
      return c;
    }
    case AgentKind::dqn: {
      auto c = std::make_unique<DqnController>(config);
      if (!training) c->agent().restore(load_checkpoint(checkpoint, "agent"));
      return c;
    }
    case AgentKind::random:
      return std::make_unique<RandomController>(config.seed);
  }
  throw ConfigError("unknown agent kind");
}

data::ObservationPtr observe_frame(const env::Frame& frame) {
  return std::make_shared<const data::Observation>(data::preprocess(frame));
}

struct EpisodeOutcome {
  double reward = 0.0;
  int steps = 0;
};

EpisodeOutcome run_episode(env::CarRacing& env, Controller& c, std::uint64_t env_seed, int episode, bool greedy,
                           bool learn, const LossSink& sink, std::int64_t* global_step = nullptr) {
  data::ObservationStack stack = data::ObservationStack::filled(observe_frame(env.reset(env_seed)));
  c.begin_episode(stack, episode);
  EpisodeOutcome out;
  bool done = false;
  while (!done) {
    const int action = c.act(greedy);
    env::StepResult r = env.step(action);
    done = r.done;
    out.reward += r.reward;
    ++out.steps;
    if (global_step) ++*global_step;
    data::ObservationStack next = stack.pushed(observe_frame(r.frame));
    c.observe(action, r.reward, next, done, learn, sink);
    stack = std::move(next);
  }
  return out;
}

}  // namespace

TrainResult run_training(const RunConfig& config, const EpisodeCallback& on_episode) {
  validate(config);
  auto controller = make_controller(config, {}, true);
  const fs::path out(config.out_dir);
  fs::create_directories(out / "checkpoints");
  save_run_config(out / "config.json", config);

  TrainResult result;
  result.metrics_csv = out / "metrics.csv";
  MetricsCsv csv(result.metrics_csv);
  std::ofstream losses;
  int episode = 0;
  std::int64_t global_step = 0;
  LossSink sink;
  if (config.log_losses && config.agent != AgentKind::random) {
    result.losses_jsonl = out / "losses.jsonl";
    losses.open(result.losses_jsonl, std::ios::trunc);
    if (!losses) throw ConfigError("cannot write " + result.losses_jsonl.string());
    sink = [&](const nlohmann::json& terms) {
      nlohmann::json line = {{"episode", episode}, {"step", global_step}};
      line.update(terms);
      losses << line.dump() << "\n";
    };
  }

  env::CarRacing env(config.effective_env());
  MarTracker mar;
  for (episode = 0; episode < config.episodes; ++episode) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpisodeOutcome o = run_episode(env, *controller, episode_seed(config.seed, 0, static_cast<std::uint64_t>(episode)),
                                         episode, false, true, sink, &global_step);
    EpisodeMetrics m;
    m.episode = episode;
    m.steps = o.steps;
    m.cumulative_reward = o.reward;
    m.mar = mar.push(o.reward);
    if (config.record_wall_time) {
      m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    }
    csv.append(m);
    if (losses.is_open()) losses.flush();
    result.metrics.push_back(m);
    if (on_episode) on_episode(m);
    if ((episode + 1) % config.checkpoint_every == 0) {
      if (const auto snap = controller->snapshot()) {
        nn::write_checkpoint(out / "checkpoints" / fmt::format("episode_{:05d}.fepr", episode + 1), *snap);
      }
    }
  }
  if (const auto snap = controller->snapshot()) {
    result.final_checkpoint = out / "final.fepr";
    nn::write_checkpoint(result.final_checkpoint, *snap);
  }
  result.learn_steps = controller->learn_steps;
  return result;
}

EvalResult evaluate(const RunConfig& config, const fs::path& checkpoint, int episodes) {
  validate(config);
  if (episodes <= 0) throw ConfigError("eval needs at least one episode");
  auto controller = make_controller(config, checkpoint, false);
  env::CarRacing env(config.effective_env());
  EvalResult result;
  for (int e = 0; e < episodes; ++e) {
    const EpisodeOutcome o =
        run_episode(env, *controller, episode_seed(config.seed, 1, static_cast<std::uint64_t>(e)), e, true, false, {});
    result.rewards.push_back(o.reward);
  }
  const double n = static_cast<double>(result.rewards.size());
  result.mean = std::accumulate(result.rewards.begin(), result.rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : result.rewards) var += (r - result.mean) * (r - result.mean);
  result.stddev = std::sqrt(var / n);
  return result;
}

RecordStats record_demo(const RunConfig& config, int steps, const fs::path& path) {
  if (steps <= 0) throw ConfigError("record needs a positive step count");
  env::EnvConfig env_config = config.effective_env();
  env::validate(env_config);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  env::CarRacing env(env_config);
  env::ScriptedDriver driver(config.driver, config.seed);
  data::DemoWriter writer(path.string());
  RecordStats stats;
  double coverage_sum = 0.0;
  int episode = 0;
  env::Frame frame = env.reset(episode_seed(config.seed, 2, 0));
  for (int s = 0; s < steps; ++s) {
    const data::Observation obs = data::preprocess(frame);
    const int action = driver.act(env);
    env::StepResult r = env.step(action);
    writer.append({static_cast<std::uint8_t>(action), r.reward, r.done, data::quantize(obs)});
    if (r.done) {
      coverage_sum += static_cast<double>(env.tiles_visited()) / env.track().size();
      ++stats.episodes_finished;
      frame = env.reset(episode_seed(config.seed, 2, static_cast<std::uint64_t>(++episode)));
    } else {
      frame = std::move(r.frame);
    }
  }
  stats.mean_tile_fraction = stats.episodes_finished > 0
                                 ? coverage_sum / stats.episodes_finished
                                 : static_cast<double>(env.tiles_visited()) / env.track().size();
  writer.close();
  stats.records = writer.count();
  spdlog::info("recorded {} steps over {} finished episodes to {}", stats.records, stats.episodes_finished, path.string());
  return stats;
}

}  // namespace fepr::train
