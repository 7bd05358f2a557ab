#include <doctest.h>

#include "fepr/agent/losses.hpp"
#include "fepr/agent/vae.hpp"
#include "fepr/nn/optimizer.hpp"

using namespace fepr;
using namespace fepr::agent;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

TEST_CASE("VAE layer listing reproduces the reference layout") {
  VaeConfig cfg;
  cfg.relu_before_sigmoid = true;  // reference layout, relu ahead of the sigmoid
  Vae<float> vae(cfg);
  std::mt19937_64 rng(0);
  vae.init(rng);
  const std::vector<LayerShape> rows = vae.layer_shapes();
  // (type, output) in table order; empty shape rows keep the previous shape
  const std::vector<std::pair<std::string, Shape>> table{
      {"conv", {1, 32, 20, 20}},   {"batchnorm", {1, 32, 20, 20}}, {"relu", {1, 32, 20, 20}},
      {"conv", {1, 64, 9, 9}},     {"batchnorm", {1, 64, 9, 9}},   {"relu", {1, 64, 9, 9}},
      {"conv", {1, 128, 3, 3}},    {"batchnorm", {1, 128, 3, 3}},  {"relu", {1, 128, 3, 3}},
      {"conv", {1, 256, 1, 1}},    {"relu", {1, 256, 1, 1}},       {"dense", {1, 128}},
      {"dense mu", {1, 128}},      {"dense logvar", {1, 128}},     {"dense", {1, 128}},
      {"dense", {1, 256}},         {"deconv", {1, 128, 3, 3}},     {"batchnorm", {1, 128, 3, 3}},
      {"relu", {1, 128, 3, 3}},    {"deconv", {1, 64, 9, 9}},      {"batchnorm", {1, 64, 9, 9}},
      {"relu", {1, 64, 9, 9}},     {"deconv", {1, 32, 20, 20}},    {"batchnorm", {1, 32, 20, 20}},
      {"relu", {1, 32, 20, 20}},   {"deconv", {1, 8, 42, 42}},     {"batchnorm", {1, 8, 42, 42}},
      {"relu", {1, 8, 42, 42}},    {"sigmoid", {1, 8, 42, 42}}};
  REQUIRE(rows.size() == table.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    INFO("row " << i << " " << rows[i].type);
    CHECK(rows[i].type == table[i].first);
    CHECK(rows[i].output == table[i].second);
  }
  CHECK(rows.front().input == Shape{1, 8, 42, 42});

  Vae<float> default_vae;
  const auto default_rows = default_vae.layer_shapes();
  CHECK(default_rows.size() == table.size() - 1);  // no relu ahead of the sigmoid
}

TEST_CASE("encode and decode shapes, ranges and determinism") {
  VaeConfig cfg;
  cfg.channels = {8, 8, 16, 16};
  cfg.latent = 128;
  Vae<float> vae(cfg);
  std::mt19937_64 rng(3);
  vae.init(rng);
  Tensor<float> x(Shape{2, 8, 42, 42});
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (float& v : x.values()) v = u(rng);

  Tape<float> t(false);
  const auto enc = vae.encode(t, t.constant(x), false);
  CHECK(t.shape(enc.mu) == Shape{2, 128});
  CHECK(t.shape(enc.logvar) == Shape{2, 128});
  for (float v : t.value(enc.logvar).values()) {
    REQUIRE(v >= kLogVarMin);
    REQUIRE(v <= kLogVarMax);
  }
  const Var z0 = vae.sample(t, enc, Tensor<float>(Shape{2, 128}));
  CHECK(t.value(z0) == t.value(enc.mu));

  std::mt19937_64 a(11), b(11);
  const Var za = vae.sample(t, enc, gaussian_noise<float>(2, 128, a));
  const Var zb = vae.sample(t, enc, gaussian_noise<float>(2, 128, b));
  CHECK(t.value(za) == t.value(zb));
  CHECK(t.shape(za) == Shape{2, 128});

  const Var recon = vae.decode(t, za, false);
  CHECK(t.shape(recon) == Shape{2, 8, 42, 42});
  for (float v : t.value(recon).values()) {
    REQUIRE(v > 0.f);
    REQUIRE(v < 1.f);
  }
  CHECK_THROWS_AS(vae.encode(t, t.constant(Tensor<float>(Shape{1, 8, 40, 40})), false), ConfigError);
}

TEST_CASE("VAE overfits a 10-image corpus") {
  VaeConfig cfg;
  cfg.channels = {16, 32, 64, 128};
  cfg.latent = 32;
  Vae<float> vae(cfg);
  std::mt19937_64 rng(5);
  vae.init(rng);
  // ten stacks of moving bars
  Tensor<float> x(Shape{10, 8, 42, 42});
  for (int n = 0; n < 10; ++n)
    for (int c = 0; c < 8; ++c)
      for (int h = 0; h < 42; ++h)
        for (int w = 0; w < 42; ++w) x.at(n, c, h, w) = ((w + 3 * n + c) / 6) % 2 == 0 ? 0.9f : 0.1f;

  nn::OptimizerConfig oc;
  oc.learning_rate = 2e-3;
  nn::Optimizer<float> opt(vae.state().params, oc);
  auto eval_bce = [&]() {
    Tape<float> t(false);
    const Var in = t.constant(x);
    const auto enc = vae.encode(t, in, false);
    return t.value(vae_loss(t, vae.decode(t, enc.mu, false), in, enc.mu, enc.logvar).bce)[0];
  };
  for (int step = 0; step < 3; ++step) {  // settle running stats before the baseline
    Tape<float> t(false);
    const auto enc = vae.encode(t, t.constant(x), true);
    vae.decode(t, enc.mu, true);
  }
  const float initial = eval_bce();
  for (int step = 0; step < 150; ++step) {
    Tape<float> t;
    const Var in = t.constant(x);
    const auto enc = vae.encode(t, in, true);
    const Var recon = vae.decode(t, vae.sample(t, enc, gaussian_noise<float>(10, 32, rng)), true);
    opt.step(t.backward(vae_loss(t, recon, in, enc.mu, enc.logvar).total));
  }
  const float final_bce = eval_bce();
  INFO("initial " << initial << " final " << final_bce);
  CHECK(final_bce < 0.6f * initial);
}
