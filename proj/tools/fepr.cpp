// Command-line front end: pretrain-vae, train, eval, record, serve.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fepr/data/demo_file.hpp"
#include "fepr/errors.hpp"
#include "fepr/nn/checkpoint.hpp"
#include "fepr/train/pretrain.hpp"
#include "fepr/train/runner.hpp"
#include "fepr/train/session.hpp"

using namespace fepr;
using namespace fepr::train;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig load(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  return c;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "run config JSON (defaults are used for missing keys)");
  cmd->add_option("--seed", f.seed, "overrides the config seed");
}

SessionServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) std::thread([] { g_server->stop(); }).detach();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fepr: active-inference and DQN agents for a pixel car-racing task"};
  app.require_subcommand(1);

  CommonFlags pre_flags;
  std::string demo_path;
  std::optional<int> epochs;
  auto* pre = app.add_subcommand("pretrain-vae", "train the observation VAE on a recorded demo");
  add_common(pre, pre_flags);
  pre->add_option("--demo", demo_path, "FEPD recording")->required();
  pre->add_option("--out", pre_flags.out, "checkpoint to write")->required();
  pre->add_option("--epochs", epochs, "overrides pretrain.epochs");

  CommonFlags train_flags;
  std::optional<int> train_episodes, train_steps;
  std::string vae_checkpoint;
  auto* tr = app.add_subcommand("train", "train an agent and write metrics and checkpoints");
  add_common(tr, train_flags);
  tr->add_option("--out", train_flags.out, "output directory (overrides out_dir)");
  tr->add_option("--checkpoint", vae_checkpoint, "pre-trained VAE checkpoint (overrides vae_checkpoint)");
  tr->add_option("--episodes", train_episodes, "overrides episodes");
  tr->add_option("--steps", train_steps, "overrides max_steps");

  CommonFlags eval_flags;
  std::string eval_checkpoint;
  std::optional<int> eval_episodes, eval_steps;
  auto* ev = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  add_common(ev, eval_flags);
  ev->add_option("--checkpoint", eval_checkpoint, "agent checkpoint (ignored for the random agent)");
  ev->add_option("--episodes", eval_episodes, "overrides eval_episodes");
  ev->add_option("--steps", eval_steps, "overrides max_steps");
  ev->add_option("--out", eval_flags.out, "also write the result as JSON here");

  CommonFlags rec_flags;
  int rec_steps = 10000;
  auto* rec = app.add_subcommand("record", "record a scripted-driver demo in FEPD format");
  add_common(rec, rec_flags);
  rec->add_option("--steps", rec_steps, "number of records")->check(CLI::PositiveNumber);
  rec->add_option("--out", rec_flags.out, "FEPD file to write")->required();

  CommonFlags serve_flags;
  int port = 8765;
  double tick_rate = 30.0;
  std::size_t record_limit = 0;
  std::string address = "127.0.0.1";
  auto* srv = app.add_subcommand("serve", "WebSocket session service for the browser UI");
  add_common(srv, serve_flags);
  srv->add_option("--port", port, "listening port (0 picks a free one)")->check(CLI::Range(0, 65535));
  srv->add_option("--address", address, "bind address");
  srv->add_option("--tick-rate", tick_rate, "ticks per second")->check(CLI::PositiveNumber);
  srv->add_option("--record-limit", record_limit, "stop each recording after this many records (0 = never)");
  srv->add_option("--out", serve_flags.out, "directory for FEPD recordings");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pre) {
      RunConfig c = load(pre_flags);
      if (epochs) c.pretrain.epochs = *epochs;
      validate(c);
      const data::Demo demo = data::read_demo(demo_path);
      const PretrainResult r = pretrain_vae(demo, c.daif.vae, c.pretrain, c.seed, [](const PretrainEpoch& e) {
        spdlog::info("epoch {:3d}  train bce {:10.2f} kl {:8.2f}  held-out bce {:10.2f} kl {:8.2f}", e.epoch, e.train_bce,
                     e.train_kl, e.heldout_bce, e.heldout_kl);
      });
      nn::write_checkpoint(pre_flags.out, r.checkpoint);
      nlohmann::json curve = nlohmann::json::array();
      for (const auto& e : r.curve) {
        curve.push_back({{"epoch", e.epoch}, {"train_bce", e.train_bce}, {"train_kl", e.train_kl},
                         {"heldout_bce", e.heldout_bce}, {"heldout_kl", e.heldout_kl}});
      }
      std::ofstream(pre_flags.out + ".curve.json") << curve.dump(2) << "\n";
      spdlog::info("wrote {} ({} train / {} held-out stacks)", pre_flags.out, r.train_stacks, r.heldout_stacks);
    } else if (*tr) {
      RunConfig c = load(train_flags);
      if (!train_flags.out.empty()) c.out_dir = train_flags.out;
      if (!vae_checkpoint.empty()) c.vae_checkpoint = vae_checkpoint;
      if (train_episodes) c.episodes = *train_episodes;
      if (train_steps) c.max_steps = *train_steps;
      const TrainResult r = run_training(c, [](const EpisodeMetrics& m) {
        spdlog::info("episode {:4d}  steps {:4d}  reward {:8.2f}  mar {:8.2f}  {} ms", m.episode, m.steps,
                     m.cumulative_reward, m.mar, m.wall_ms);
      });
      spdlog::info("metrics in {}; {} learning steps", r.metrics_csv.string(), r.learn_steps);
    } else if (*ev) {
      RunConfig c = load(eval_flags);
      if (eval_steps) c.max_steps = *eval_steps;
      const EvalResult r = evaluate(c, eval_checkpoint, eval_episodes.value_or(c.eval_episodes));
      const nlohmann::json j = {{"agent", to_string(c.agent)}, {"episodes", r.rewards.size()}, {"mean", r.mean},
                                {"std", r.stddev}, {"rewards", r.rewards}};
      std::cout << j.dump(2) << "\n";
      if (!eval_flags.out.empty()) std::ofstream(eval_flags.out) << j.dump(2) << "\n";
    } else if (*rec) {
      const RunConfig c = load(rec_flags);
      const RecordStats s = record_demo(c, rec_steps, rec_flags.out);
      std::cout << nlohmann::json{{"records", s.records}, {"episodes_finished", s.episodes_finished},
                                  {"mean_tile_fraction", s.mean_tile_fraction}}
                       .dump()
                << "\n";
    } else if (*srv) {
      const RunConfig c = load(serve_flags);
      SessionConfig sc;
      sc.env = c.effective_env();
      sc.seed = c.seed;
      sc.tick_rate = tick_rate;
      sc.record_limit = record_limit;
      sc.record_dir = serve_flags.out.empty() ? std::filesystem::path(c.out_dir) / "recordings" : std::filesystem::path(serve_flags.out);
      SessionServer server(sc, static_cast<std::uint16_t>(port), address);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("serving on ws://{}:{} at {} ticks/s; recordings go to {}", address, server.port(), tick_rate,
                   sc.record_dir.string());
      server.run();
      g_server = nullptr;
    }
  } catch (const ParseError& e) {
    spdlog::error("parse error: {}", e.what());
    return 3;
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
