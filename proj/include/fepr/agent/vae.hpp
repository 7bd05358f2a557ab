#pragma once

#include <array>
#include <random>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "fepr/nn/layers.hpp"

namespace fepr::agent {

struct VaeConfig {
  int latent = 128;
  std::array<int, 4> channels{32, 64, 128, 256};
  int dense_width = 128;  // width of the dense layer between the conv stack and mu / logvar
  int in_channels = 8;
  // The reference layout has a relu right before the output sigmoid. That pins every
  // reconstruction to [0.5, 1) and makes dark pixels unreachable, so it is off by default.
  bool relu_before_sigmoid = false;
};

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);

// One row of a network's layer listing: layer kind plus input and output shapes.
struct LayerShape {
  std::string type;
  nn::Shape input;
  nn::Shape output;
};

inline constexpr float kLogVarMin = -10.f;
inline constexpr float kLogVarMax = 10.f;

// Convolutional VAE over (B, 8, 42, 42) stacks.
template <typename T>
class Vae {
 public:
  struct Encoded {
    nn::Var mu;
    nn::Var logvar;  // clamped to [kLogVarMin, kLogVarMax]
  };

  explicit Vae(VaeConfig config = {}, const std::string& prefix = "vae");
  Vae(const Vae&) = delete;
  Vae& operator=(const Vae&) = delete;

  void init(std::mt19937_64& rng);

  Encoded encode(nn::Tape<T>& tape, nn::Var x, bool training);
  // z = mu + exp(logvar / 2) * eps
  nn::Var sample(nn::Tape<T>& tape, const Encoded& enc, const nn::Tensor<T>& eps);
  nn::Var decode(nn::Tape<T>& tape, nn::Var z, bool training);

  nn::StateRefs<T> encoder_state();
  nn::StateRefs<T> decoder_state();
  nn::StateRefs<T> state();

  const VaeConfig& config() const { return config_; }

  // Runs encoder then decoder on a zero batch of one and lists every layer in order.
  std::vector<LayerShape> layer_shapes();

 private:
  nn::Var traced(nn::Tape<T>& tape, const char* type, nn::Var in, nn::Var out);

  VaeConfig config_;
  std::vector<LayerShape>* trace_ = nullptr;
  nn::Conv2d<T> enc_conv1_, enc_conv2_, enc_conv3_, enc_conv4_;
  nn::BatchNorm2d<T> enc_bn1_, enc_bn2_, enc_bn3_;
  nn::Dense<T> enc_dense_, enc_mu_, enc_logvar_;
  nn::Dense<T> dec_dense1_, dec_dense2_;
  nn::Deconv2d<T> dec_deconv1_, dec_deconv2_, dec_deconv3_, dec_deconv4_;
  nn::BatchNorm2d<T> dec_bn1_, dec_bn2_, dec_bn3_, dec_bn4_;
};

// Standard normal noise with the shape of a (B, latent) batch.
template <typename T>
nn::Tensor<T> gaussian_noise(int batch, int latent, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::Tensor<T> eps(nn::Shape{batch, latent});
  for (T& v : eps.values()) v = static_cast<T>(normal(rng));
  return eps;
}

}  // namespace fepr::agent
