#include <doctest.h>

#include <random>

#include "fepr/nn/layers.hpp"
#include "fepr/nn/ops.hpp"

using namespace fepr;
using namespace fepr::nn;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  Tensor<float> t(std::move(shape));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

Shape conv_shape(Shape in, int out_channels, int kernel, int stride) {
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>(in, 0.5f));
  Var w = tape.constant(Tensor<float>(Shape{out_channels, in[1], kernel, kernel}, 0.1f));
  Var b = tape.constant(Tensor<float>(Shape{out_channels}));
  return tape.shape(conv2d(tape, x, w, b, stride));
}

Shape deconv_shape(Shape in, int out_channels, int kernel, int stride) {
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>(in, 0.5f));
  Var w = tape.constant(Tensor<float>(Shape{in[1], out_channels, kernel, kernel}, 0.1f));
  Var b = tape.constant(Tensor<float>(Shape{out_channels}));
  return tape.shape(deconv2d(tape, x, w, b, stride));
}

}  // namespace

TEST_CASE("tensor rejects inconsistent buffers and non-positive dims") {
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), ConfigError);
  CHECK_THROWS_AS(Tensor<float>(Shape{2, 0}), ConfigError);
  Tensor<float> t(Shape{2, 3}, 1.f);
  CHECK(t.size() == 6);
  CHECK(t.reshaped(Shape{6}).shape() == Shape{6});
  CHECK_THROWS_AS(t.reshaped(Shape{4}), ConfigError);
}

TEST_CASE("conv2d output sizes follow floor((H - k) / s) + 1") {
  CHECK(conv_shape({1, 8, 42, 42}, 64, 4, 2) == Shape{1, 64, 20, 20});
  CHECK(conv_shape({1, 64, 9, 9}, 128, 5, 2) == Shape{1, 128, 3, 3});
  CHECK(conv_shape({3, 2, 7, 5}, 4, 3, 2) == Shape{3, 4, 3, 2});
}

TEST_CASE("conv2d with a 1x1 identity kernel returns its input") {
  Tape<float> tape;
  const Tensor<float> input = random_tensor({2, 3, 4, 4}, 7);
  Tensor<float> w(Shape{3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.f;
  Var y = conv2d(tape, tape.constant(input), tape.constant(w), tape.constant(Tensor<float>(Shape{3})), 1);
  CHECK(tape.value(y) == input);
}

TEST_CASE("conv2d rejects mismatched weights and undersized inputs") {
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>(Shape{1, 8, 42, 42}));
  Var b = tape.constant(Tensor<float>(Shape{64}));
  CHECK_THROWS_AS(conv2d(tape, x, tape.constant(Tensor<float>(Shape{64, 7, 4, 4})), b, 2), ConfigError);
  CHECK_THROWS_AS(conv2d(tape, x, tape.constant(Tensor<float>(Shape{64, 8, 4, 4})),
                         tape.constant(Tensor<float>(Shape{32})), 2),
                  ConfigError);
  Var small = tape.constant(Tensor<float>(Shape{1, 8, 3, 3}));
  CHECK_THROWS_AS(conv2d(tape, small, tape.constant(Tensor<float>(Shape{64, 8, 4, 4})), b, 2), ConfigError);
}

TEST_CASE("deconv2d output sizes follow (H - 1) * s + k") {
  CHECK(deconv_shape({1, 256, 1, 1}, 128, 3, 2) == Shape{1, 128, 3, 3});
  CHECK(deconv_shape({1, 32, 20, 20}, 8, 4, 2) == Shape{1, 8, 42, 42});
}

TEST_CASE("deconv2d with a 1x1 identity kernel returns its input") {
  Tape<float> tape;
  const Tensor<float> input = random_tensor({2, 3, 5, 5}, 11);
  Tensor<float> w(Shape{3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.f;
  Var y = deconv2d(tape, tape.constant(input), tape.constant(w), tape.constant(Tensor<float>(Shape{3})), 1);
  CHECK(tape.value(y) == input);
}

TEST_CASE("deconv2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, deconv(y)> for the same weights (no bias).
  const Tensor<float> x = random_tensor({1, 3, 9, 9}, 1);
  const Tensor<float> w = random_tensor({4, 3, 3, 3}, 2);
  Tape<float> tape;
  Var zero4 = tape.constant(Tensor<float>(Shape{4}));
  Var zero3 = tape.constant(Tensor<float>(Shape{3}));
  Var cx = conv2d(tape, tape.constant(x), tape.constant(w), zero4, 2);
  const Tensor<float> y = random_tensor(tape.shape(cx), 3);
  Var dy = deconv2d(tape, tape.constant(y), tape.constant(w), zero3, 2);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += tape.value(cx)[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += tape.value(dy)[i] * x[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("maxpool, relu and softmax basics") {
  Tape<float> tape;
  Var x = tape.constant(random_tensor({1, 64, 20, 20}, 5));
  CHECK(tape.shape(maxpool2d(tape, x, 2, 2)) == Shape{1, 64, 10, 10});
  Var x2 = tape.constant(random_tensor({1, 128, 4, 4}, 6));
  CHECK(tape.shape(maxpool2d(tape, x2, 2, 2)) == Shape{1, 128, 2, 2});

  Var negative = tape.constant(Tensor<float>(Shape{2, 5}, -3.f));
  for (float v : tape.value(relu(tape, negative)).values()) CHECK(v == 0.f);

  Var zeros = tape.constant(Tensor<float>(Shape{1, 11}));
  for (float v : tape.value(softmax(tape, zeros)).values()) CHECK(v == doctest::Approx(1.0 / 11.0));
}

TEST_CASE("softmax is positive, normalized and shift invariant") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-20, 20);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> logits(Shape{1, 11});
    for (double& v : logits.values()) v = dist(rng);
    Tensor<double> shifted = logits;
    const double c = dist(rng);
    for (double& v : shifted.values()) v += c;
    Tape<double> tape;
    const Tensor<double>& p = tape.value(softmax(tape, tape.constant(logits)));
    const Tensor<double>& q = tape.value(softmax(tape, tape.constant(shifted)));
    double total = 0;
    for (std::size_t i = 0; i < 11; ++i) {
      CHECK(p[i] > 0.0);
      CHECK(std::abs(p[i] - q[i]) < 1e-6);
      total += p[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("backward of x^2 at 3 is 6") {
  Parameter<float> x{"x", Tensor<float>::scalar(3.f)};
  Tape<float> tape;
  Var loss = square(tape, tape.parameter(x));
  auto grads = tape.backward(loss);
  REQUIRE(grads.count(&x) == 1);
  CHECK(grads.at(&x).item() == doctest::Approx(6.f));
}

TEST_CASE("backward visits every node once in reverse order") {
  Parameter<float> a{"a", Tensor<float>(Shape{3}, 1.f)};
  Tape<float> tape;
  Var x = tape.parameter(a);
  Var y = square(tape, x);
  Var z = add(tape, y, x);
  Var loss = sum(tape, z);
  tape.backward(loss);
  const auto& order = tape.last_backward_order();
  REQUIRE(order.size() == tape.size());
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == static_cast<int>(tape.size() - 1 - i));
}

TEST_CASE("frozen and unreached parameters are omitted from the gradient map") {
  Parameter<float> live{"live", Tensor<float>(Shape{2}, 1.f)};
  Parameter<float> frozen{"frozen", Tensor<float>(Shape{2}, 2.f), false};
  Parameter<float> unused{"unused", Tensor<float>(Shape{2}, 2.f)};
  Tape<float> tape;
  Var loss = sum(tape, mul(tape, tape.parameter(live), tape.parameter(frozen)));
  tape.parameter(unused);
  auto grads = tape.backward(loss);
  CHECK(grads.count(&live) == 1);
  CHECK(grads.count(&frozen) == 0);
  CHECK(grads.count(&unused) == 0);
  CHECK(grads.at(&live)[0] == doctest::Approx(2.f));
}

TEST_CASE("backward rejects non-scalar losses") {
  Parameter<float> p{"p", Tensor<float>(Shape{2}, 1.f)};
  Tape<float> tape;
  Var v = square(tape, tape.parameter(p));
  CHECK_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("forward passes are bit-identical for identical seeds and inputs") {
  auto run = [] {
    std::mt19937_64 rng(1234);
    Conv2d<float> conv("c", 8, 16, 4, 2);
    BatchNorm2d<float> bn("bn", 16);
    Dense<float> fc("fc", 16 * 20 * 20, 11);
    conv.init(rng);
    fc.init(rng);
    Tape<float> tape;
    Var x = tape.constant(random_tensor({2, 8, 42, 42}, 77));
    Var h = relu(tape, bn.forward(tape, conv.forward(tape, x), true));
    Var y = fc.forward(tape, reshape(tape, h, {2, 16 * 20 * 20}));
    return tape.value(y);
  };
  CHECK(run() == run());
}

TEST_CASE("batchnorm in evaluation mode uses running statistics") {
  BatchNorm2d<float> bn("bn", 2);
  bn.stats.running_mean = Tensor<float>(Shape{2}, std::vector<float>{1.f, -1.f});
  bn.stats.running_var = Tensor<float>(Shape{2}, std::vector<float>{4.f, 1.f});
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>(Shape{1, 2, 1, 1}, std::vector<float>{3.f, 0.f}));
  const Tensor<float>& y = tape.value(bn.forward(tape, x, false));
  CHECK(y[0] == doctest::Approx(2.f / std::sqrt(4.f + 1e-5f)));
  CHECK(y[1] == doctest::Approx(1.f / std::sqrt(1.f + 1e-5f)));
}

TEST_CASE("batchnorm with a constant channel stays finite") {
  BatchNorm2d<float> bn("bn", 1);
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>(Shape{4, 1, 2, 2}, 5.f));
  const Tensor<float>& y = tape.value(bn.forward(tape, x, true));
  CHECK(y.all_finite());
  for (float v : y.values()) CHECK(v == doctest::Approx(0.f));
}
