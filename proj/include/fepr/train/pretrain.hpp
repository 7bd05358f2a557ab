#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fepr/agent/vae.hpp"
#include "fepr/data/demo_file.hpp"
#include "fepr/nn/checkpoint.hpp"
#include "fepr/train/run_config.hpp"

namespace fepr::train {

struct PretrainEpoch {
  int epoch = 0;  // 0 is the untrained network
  double train_bce = 0.0;
  double train_kl = 0.0;
  double heldout_bce = 0.0;
  double heldout_kl = 0.0;
};

struct PretrainResult {
  nn::NamedTensors checkpoint;  // vae.* tensors plus the frozen marker
  std::vector<PretrainEpoch> curve;
  std::size_t train_stacks = 0;
  std::size_t heldout_stacks = 0;
};

// Stacks of consecutive recorded frames, one per record from the 8th on.
std::vector<data::ObservationStack> demo_stacks(const data::Demo& demo);

// Per-sample BCE and KL of the reconstruction from z = mu with running batch-norm stats.
std::pair<double, double> evaluate_vae(agent::Vae<float>& vae, const std::vector<data::ObservationStack>& stacks,
                                       std::size_t begin, std::size_t end, int batch_size);

using PretrainCallback = std::function<void(const PretrainEpoch&)>;

// Trains only the VAE objective on the recording. The trailing holdout_fraction of the
// stacks is never trained on.
PretrainResult pretrain_vae(const data::Demo& demo, const agent::VaeConfig& vae_config, const PretrainConfig& config,
                            std::uint64_t seed, const PretrainCallback& on_epoch = {});

}  // namespace fepr::train
