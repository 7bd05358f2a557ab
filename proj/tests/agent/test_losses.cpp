#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fepr/agent/losses.hpp"
#include "fepr/agent/mlp.hpp"
#include "fepr/agent/vae.hpp"
#include "support/gradcheck.hpp"

using namespace fepr;
using namespace fepr::agent;
using nn::Parameter;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;
using fepr::testing::check_gradients;
using fepr::testing::fill_uniform;

namespace {

double scalar(Tape<double>& t, Var v) { return t.value(v).item(); }

Tensor<double> filled(Shape s, double v) { return Tensor<double>(std::move(s), v); }

Tensor<double> random_rows_simplex(int rows, int cols, std::mt19937_64& rng) {
  Tensor<double> t(Shape{rows, cols});
  fill_uniform(t, rng, 0.05, 1.0);
  for (int r = 0; r < rows; ++r) {
    double s = 0;
    for (int c = 0; c < cols; ++c) s += t[r * cols + c];
    for (int c = 0; c < cols; ++c) t[r * cols + c] /= s;
  }
  return t;
}

}  // namespace

TEST_CASE("vae KL term closed forms") {
  Tape<double> t(false);
  const Var zeros = t.constant(filled({1, 128}, 0.0));
  const Var recon = t.constant(filled({1, 4}, 0.5));
  const auto standard = vae_loss(t, recon, recon, zeros, zeros);
  CHECK(scalar(t, standard.kl) == 0.0);
  const auto shifted = vae_loss(t, recon, recon, t.constant(filled({1, 128}, 1.0)), zeros);
  CHECK(scalar(t, shifted.kl) == doctest::Approx(64.0).epsilon(1e-12));
  // strictly positive away from the standard normal
  const auto wide = vae_loss(t, recon, recon, zeros, t.constant(filled({1, 128}, 0.3)));
  CHECK(scalar(t, wide.kl) > 0.0);
  // batch mean: two identical rows give the single-row value
  const auto two = vae_loss(t, t.constant(filled({2, 4}, 0.5)), t.constant(filled({2, 4}, 0.5)),
                            t.constant(filled({2, 128}, 1.0)), t.constant(filled({2, 128}, 0.0)));
  CHECK(scalar(t, two.kl) == doctest::Approx(64.0));
}

TEST_CASE("vae BCE is near zero on exact binary reconstructions") {
  Tape<float> t(false);
  Tensor<float> target(Shape{1, 8, 42, 42});
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = static_cast<float>(i % 3 == 0);
  const Var x = t.constant(target);
  const Var zeros = t.constant(Tensor<float>(Shape{1, 4}));
  const auto terms = vae_loss(t, x, x, zeros, zeros);
  const float bce = t.value(terms.bce)[0];
  CHECK(bce >= 0.f);
  CHECK(bce <= 14112 * 2e-7f);
  // BCE of a uniform 0.5 reconstruction is ln 2 per pixel
  const auto half = vae_loss(t, t.constant(Tensor<float>(target.shape(), 0.5f)), x, zeros, zeros);
  CHECK(t.value(half.bce)[0] == doctest::Approx(14112 * std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("transition input and loss") {
  Tape<double> t(false);
  const Var mu = t.constant(filled({2, 128}, 0.5));
  const Var lv = t.constant(filled({2, 128}, 0.0));
  const Var in = transition_input(t, mu, lv, {3, 10});
  CHECK(t.shape(in) == Shape{2, 257});
  CHECK(t.value(in)[256] == doctest::Approx(0.3));
  CHECK(t.value(in)[257 + 256] == doctest::Approx(1.0));
  CHECK(t.value(in)[128] == doctest::Approx(1.0));  // variance, not log-variance
  CHECK(t.shape(latent_input(t, mu, lv)) == Shape{2, 256});

  Mlp<double> net("trans", 257, 16, 128);
  std::mt19937_64 rng(1);
  net.init(rng);
  CHECK(t.shape(net.forward(t, in)) == Shape{2, 128});

  const Var a = t.constant(filled({3, 128}, 0.7));
  CHECK(scalar(t, mse(t, a, a)) == 0.0);
  CHECK(scalar(t, mse(t, t.constant(filled({3, 128}, 1.7)), a)) == doctest::Approx(1.0));
}

TEST_CASE("state_kl closed forms and non-negativity") {
  Tape<double> t(false);
  const Var mu = t.constant(filled({1, 128}, 0.25));
  const Var zero_lv = t.constant(filled({1, 128}, 0.0));
  CHECK(t.value(state_kl(t, mu, mu, zero_lv))[0] == 0.0);
  Tensor<double> shifted = filled({1, 128}, 0.25);
  shifted[17] += 1.0;
  CHECK(t.value(state_kl(t, t.constant(shifted), mu, zero_lv))[0] == doctest::Approx(0.5).epsilon(1e-12));

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> a(Shape{3, 6}), b(Shape{3, 6}), lv(Shape{3, 6});
    fill_uniform(a, rng, -3, 3);
    fill_uniform(b, rng, -3, 3);
    fill_uniform(lv, rng, -4, 4);
    const Tensor<double> kl = t.value(state_kl(t, t.constant(a), t.constant(b), t.constant(lv)));
    for (double v : kl.values()) REQUIRE(v >= 0.0);
  }
  // zero only at s_hat == mu and unit variance
  const Var tiny = t.constant(filled({1, 128}, 1e-3));
  CHECK(t.value(state_kl(t, mu, mu, tiny))[0] > 0.0);
}

TEST_CASE("boltzmann prior examples and shift invariance") {
  const std::vector<double> equal(11, 0.4);
  for (double p : boltzmann_prior(equal, 12.0)) CHECK(p == doctest::Approx(1.0 / 11).epsilon(1e-12));
  const std::vector<double> two{0.0, 0.1};
  const auto p = boltzmann_prior(two, 12.0);
  const double oracle = 1.0 / (1.0 + std::exp(-1.2));
  CHECK(std::abs(p[0] - oracle) < 1e-6);
  CHECK(std::abs(p[1] - (1 - oracle)) < 1e-6);
  CHECK(std::abs(p[0] - 0.7685) < 1e-4);
  for (double v : boltzmann_prior(std::vector<double>{3.0, -7.0, 1.0}, 0.0)) CHECK(v == doctest::Approx(1.0 / 3));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> g(11), shifted(11);
    const double c = u(rng) * 10;
    for (int a = 0; a < 11; ++a) {
      g[a] = u(rng);
      shifted[a] = g[a] + c;
    }
    const auto p1 = boltzmann_prior(g, 12.0);
    const auto p2 = boltzmann_prior(shifted, 12.0);
    for (int a = 0; a < 11; ++a) REQUIRE(std::abs(p1[a] - p2[a]) < 1e-6);
    REQUIRE(std::accumulate(p1.begin(), p1.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("efe_target examples") {
  const std::vector<double> uniform(11, 1.0 / 11);
  const std::vector<double> twos(11, 2.0);
  CHECK(efe_target(1.0, 0.0, uniform, twos, true, 0.99) == -1.0);
  CHECK(efe_target(0.0, 0.0, uniform, twos, false, 0.99) == doctest::Approx(1.98).epsilon(1e-12));
  CHECK(efe_target(2.5, 0.75, uniform, twos, false, 0.0) == -2.5 + 0.75);
  CHECK(efe_target(2.5, 0.75, uniform, twos, true, 0.0) == -2.5 + 0.75);
}

TEST_CASE("value loss picks the taken action") {
  Tape<double> t;
  Parameter<double> g{"g", filled({2, 11}, 1.0)};
  g.value[3] = 5.0;
  g.value[11 + 7] = -1.0;
  const Tensor<double> targets(Shape{2}, std::vector<double>{5.0, 1.0});
  const Var loss = value_loss(t, t.parameter(g), {3, 7}, targets);
  CHECK(scalar(t, loss) == doctest::Approx((0.0 + 4.0) / 2));
  const auto grads = t.backward(loss);
  const Tensor<double>& dg = grads.at(&g);
  for (std::size_t i = 0; i < dg.size(); ++i) {
    if (i == 11 + 7) {
      CHECK(dg[i] == doctest::Approx(-2.0));
    } else {
      CHECK(dg[i] == 0.0);
    }
  }
}

TEST_CASE("policy KL examples and energy minus entropy") {
  Tape<double> t(false);
  Tensor<double> onehot(Shape{1, 11});
  onehot[4] = 1.0;
  const Var uniform = t.constant(filled({1, 11}, 1.0 / 11));
  CHECK(scalar(t, policy_kl(t, t.constant(onehot), uniform)) == doctest::Approx(std::log(11.0)).epsilon(1e-9));
  CHECK(std::abs(scalar(t, policy_kl(t, uniform, uniform))) < 1e-12);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor<double> q = random_rows_simplex(1, 11, rng);
    const Tensor<double> p = random_rows_simplex(1, 11, rng);
    const double kl = scalar(t, policy_kl(t, t.constant(q), t.constant(p)));
    double energy = 0, entropy = 0;
    for (int a = 0; a < 11; ++a) {
      energy -= q[a] * std::log(p[a]);
      entropy -= q[a] * std::log(q[a]);
    }
    REQUIRE(kl >= 0.0);
    REQUIRE(std::abs(kl - (energy - entropy)) < 1e-6);
  }
}

TEST_CASE("loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const int B = 3, L = 4, H = 8, A = 11;
    Parameter<double> mu{"mu", Tensor<double>(Shape{B, L})};
    Parameter<double> lv{"lv", Tensor<double>(Shape{B, L})};
    Parameter<double> mu1{"mu1", Tensor<double>(Shape{B, L})};
    fill_uniform(mu.value, rng);
    fill_uniform(lv.value, rng, -1, 1);
    fill_uniform(mu1.value, rng);
    const std::vector<int> actions{1, 7, 10};

    Mlp<double> trans("trans", 2 * L + 1, H, L);
    Mlp<double> policy("policy", 2 * L, H, A);
    Mlp<double> value("value", 2 * L, H, A);
    trans.init(rng);
    policy.init(rng);
    value.init(rng);
    auto params = [](Mlp<double>& m, std::vector<Parameter<double>*> extra) {
      for (auto* p : m.state().params) extra.push_back(p);
      return extra;
    };

    SUBCASE("transition mse") {
      auto r = check_gradients(params(trans, {&mu, &lv}), [&](Tape<double>& t) {
        return mse(t, trans.forward(t, transition_input(t, t.parameter(mu), t.parameter(lv), actions)), t.parameter(mu1));
      });
      INFO(r.worst);
      CHECK(r.max_relative_error < 1e-4);
    }
    SUBCASE("state kl") {
      Parameter<double> s_hat{"s_hat", Tensor<double>(Shape{B, L})};
      fill_uniform(s_hat.value, rng);
      auto r = check_gradients({&s_hat, &mu, &lv}, [&](Tape<double>& t) {
        return nn::sum(t, state_kl(t, t.parameter(s_hat), t.parameter(mu), t.parameter(lv)));
      });
      INFO(r.worst);
      CHECK(r.max_relative_error < 1e-4);
    }
    SUBCASE("value mse") {
      Tensor<double> targets(Shape{B});
      fill_uniform(targets, rng, -3, 3);
      auto r = check_gradients(params(value, {&mu, &lv}), [&](Tape<double>& t) {
        return value_loss(t, value.forward(t, latent_input(t, t.parameter(mu), t.parameter(lv))), actions, targets);
      });
      INFO(r.worst);
      CHECK(r.max_relative_error < 1e-4);
    }
    SUBCASE("policy kl from logits") {
      const Tensor<double> prior = random_rows_simplex(B, A, rng);
      auto r = check_gradients(params(policy, {&mu, &lv}), [&](Tape<double>& t) {
        return policy_kl_logits(t, policy.forward(t, latent_input(t, t.parameter(mu), t.parameter(lv))), prior);
      });
      INFO(r.worst);
      CHECK(r.max_relative_error < 1e-4);
      Tape<double> t(false);
      const Var logits = policy.forward(t, latent_input(t, t.constant(mu.value), t.constant(lv.value)));
      const double fused = t.value(policy_kl_logits(t, logits, prior)).item();
      const double plain = t.value(policy_kl(t, nn::softmax(t, logits), t.constant(prior))).item();
      CHECK(fused == doctest::Approx(plain).epsilon(1e-12));
    }
    SUBCASE("policy kl") {
      const Tensor<double> prior = random_rows_simplex(B, A, rng);
      auto r = check_gradients(params(policy, {&mu, &lv}), [&](Tape<double>& t) {
        const Var q = nn::softmax(t, policy.forward(t, latent_input(t, t.parameter(mu), t.parameter(lv))));
        return policy_kl(t, q, t.constant(prior));
      });
      INFO(r.worst);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("vae loss gradients through a tiny VAE") {
  VaeConfig cfg;
  cfg.latent = 4;
  cfg.channels = {2, 2, 3, 4};
  cfg.dense_width = 5;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    std::mt19937_64 rng(40 + seed);
    Vae<double> vae(cfg);
    vae.init(rng);
    Tensor<double> x(Shape{2, 8, 42, 42});
    fill_uniform(x, rng, 0.0, 1.0);
    const Tensor<double> eps = gaussian_noise<double>(2, 4, rng);
    auto r = check_gradients(vae.state().params, [&](Tape<double>& t) {
      const Var in = t.constant(x);
      const auto enc = vae.encode(t, in, true);
      const Var recon = vae.decode(t, vae.sample(t, enc, eps), true);
      // scaled so finite-difference noise on a ~1e4 loss stays well under the 1e-6 floor
      return nn::scale(t, vae_loss(t, recon, in, enc.mu, enc.logvar).total, 1e-4);
    }, 1e-4, 16);
    INFO(r.worst);
    CHECK(r.max_relative_error < 1e-4);
  }
}
