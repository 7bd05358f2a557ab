#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fepr/train/metrics.hpp"
#include "fepr/train/run_config.hpp"

namespace fepr::train {

struct TrainResult {
  std::vector<EpisodeMetrics> metrics;
  std::filesystem::path metrics_csv;
  std::filesystem::path losses_jsonl;  // empty unless losses were logged
  std::filesystem::path final_checkpoint;  // empty for the random agent
  std::int64_t learn_steps = 0;
};

using EpisodeCallback = std::function<void(const EpisodeMetrics&)>;

// Runs config.episodes training episodes and writes under config.out_dir:
//   config.json, metrics.csv, losses.jsonl (learning agents), checkpoints/episode_NNNNN.fepr
//   every checkpoint_every episodes, and final.fepr.
TrainResult run_training(const RunConfig& config, const EpisodeCallback& on_episode = {});

struct EvalResult {
  std::vector<double> rewards;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

// Greedy acting on evaluation-stream tracks; no learning. The checkpoint is ignored for
// the random agent.
EvalResult evaluate(const RunConfig& config, const std::filesystem::path& checkpoint, int episodes);

struct RecordStats {
  std::size_t records = 0;
  int episodes_finished = 0;
  double mean_tile_fraction = 0.0;  // over finished episodes, or the running one if none finished
};

// Drives the scripted controller for exactly `steps` env steps, resetting on episode end,
// and writes one FEPD record per step: the preprocessed frame the action was chosen on,
// the action, and the reward and done flag it produced.
RecordStats record_demo(const RunConfig& config, int steps, const std::filesystem::path& path);

}  // namespace fepr::train
