#include "fepr/train/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "fepr/agent/daif.hpp"
#include "fepr/agent/losses.hpp"
#include "fepr/errors.hpp"
#include "fepr/nn/optimizer.hpp"

namespace fepr::train {

using nn::Tape;
using nn::Tensor;
using nn::Var;

std::vector<data::ObservationStack> demo_stacks(const data::Demo& demo) {
  std::vector<data::ObservationPtr> obs;
  obs.reserve(demo.records.size());
  for (const data::DemoRecord& r : demo.records) obs.push_back(std::make_shared<data::Observation>(data::dequantize(r.pixels)));
  return data::sliding_stacks(obs);
}

std::pair<double, double> evaluate_vae(agent::Vae<float>& vae, const std::vector<data::ObservationStack>& stacks,
                                       std::size_t begin, std::size_t end, int batch_size) {
  double bce = 0.0, kl = 0.0;
  for (std::size_t i = begin; i < end; i += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(end, i + static_cast<std::size_t>(batch_size));
    std::vector<const data::ObservationStack*> batch;
    for (std::size_t k = i; k < stop; ++k) batch.push_back(&stacks[k]);
    Tape<float> tape(false);
    const Var x = tape.constant(data::stack_batch(batch));
    const auto enc = vae.encode(tape, x, false);
    const auto terms = agent::vae_loss(tape, vae.decode(tape, enc.mu, false), x, enc.mu, enc.logvar);
    const double n = static_cast<double>(stop - i);
    bce += tape.value(terms.bce)[0] * n;
    kl += tape.value(terms.kl)[0] * n;
  }
  const double count = static_cast<double>(end - begin);
  return count > 0 ? std::pair{bce / count, kl / count} : std::pair{0.0, 0.0};
}

PretrainResult pretrain_vae(const data::Demo& demo, const agent::VaeConfig& vae_config, const PretrainConfig& config,
                            std::uint64_t seed, const PretrainCallback& on_epoch) {
  if (demo.records.size() < static_cast<std::size_t>(data::kStackSize)) {
    throw ConfigError("demo holds " + std::to_string(demo.records.size()) + " frames; at least " +
                      std::to_string(data::kStackSize) + " are needed for one stack");
  }
  const std::vector<data::ObservationStack> stacks = demo_stacks(demo);
  std::size_t heldout = static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(stacks.size())));
  if (config.holdout_fraction > 0 && heldout == 0 && stacks.size() > 1) heldout = 1;
  const std::size_t n_train = stacks.size() - heldout;
  if (n_train == 0) throw ConfigError("no training stacks left after the held-out split");

  std::mt19937_64 rng(seed);
  agent::Vae<float> vae(vae_config);
  vae.init(rng);
  nn::OptimizerConfig oc;
  oc.learning_rate = config.learning_rate;
  nn::Optimizer<float> opt(vae.state().params, oc);

  PretrainResult result;
  result.train_stacks = n_train;
  result.heldout_stacks = heldout;
  auto report = [&](PretrainEpoch& e) {
    std::tie(e.heldout_bce, e.heldout_kl) = evaluate_vae(vae, stacks, n_train, stacks.size(), config.batch_size);
    result.curve.push_back(e);
    if (on_epoch) on_epoch(e);
  };
  {
    PretrainEpoch e0;
    std::tie(e0.train_bce, e0.train_kl) = evaluate_vae(vae, stacks, 0, n_train, config.batch_size);
    report(e0);
  }

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double bce = 0.0, kl = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < n_train; i += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(n_train, i + static_cast<std::size_t>(config.batch_size));
      std::vector<const data::ObservationStack*> batch;
      for (std::size_t k = i; k < stop; ++k) batch.push_back(&stacks[order[k]]);
      Tape<float> tape;
      const Var x = tape.constant(data::stack_batch(batch));
      const auto enc = vae.encode(tape, x, true);
      const Tensor<float> eps = agent::gaussian_noise<float>(static_cast<int>(batch.size()), vae_config.latent, rng);
      const auto terms = agent::vae_loss(tape, vae.decode(tape, vae.sample(tape, enc, eps), true), x, enc.mu, enc.logvar);
      const double total = tape.value(terms.total)[0];
      if (!std::isfinite(total)) {
        spdlog::error("pretrain: non-finite VAE loss in epoch {} at stack offset {}; batch skipped", epoch, i);
        continue;
      }
      opt.step(tape.backward(terms.total));
      bce += tape.value(terms.bce)[0] * static_cast<double>(batch.size());
      kl += tape.value(terms.kl)[0] * static_cast<double>(batch.size());
      seen += batch.size();
    }
    PretrainEpoch e;
    e.epoch = epoch;
    e.train_bce = seen ? bce / static_cast<double>(seen) : 0.0;
    e.train_kl = seen ? kl / static_cast<double>(seen) : 0.0;
    report(e);
    if (config.stop_at_drop > 0 && heldout > 0 &&
        e.heldout_bce <= (1.0 - config.stop_at_drop) * result.curve.front().heldout_bce) {
      spdlog::info("pretrain: held-out BCE down {:.1f}% after epoch {}; stopping", 
                   100.0 * (1.0 - e.heldout_bce / result.curve.front().heldout_bce), epoch);
      break;
    }
  }
  result.checkpoint = nn::snapshot(vae.state());
  result.checkpoint.emplace_back(agent::kVaeFrozenMarker, Tensor<float>(nn::Shape{1}, 1.f));
  return result;
}

}  // namespace fepr::train
