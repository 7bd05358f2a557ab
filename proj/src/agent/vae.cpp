#include "fepr/agent/vae.hpp"

#include <nlohmann/json.hpp>

#include "fepr/errors.hpp"

namespace fepr::agent {

using nn::Var;

void to_json(nlohmann::json& j, const VaeConfig& c) {
  j = {{"latent", c.latent},
       {"channels", c.channels},
       {"dense_width", c.dense_width},
       {"in_channels", c.in_channels},
       {"relu_before_sigmoid", c.relu_before_sigmoid}};
}

void from_json(const nlohmann::json& j, VaeConfig& c) {
  const VaeConfig d;
  c.latent = j.value("latent", d.latent);
  c.channels = j.value("channels", d.channels);
  c.dense_width = j.value("dense_width", d.dense_width);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.relu_before_sigmoid = j.value("relu_before_sigmoid", d.relu_before_sigmoid);
}

template <typename T>
Vae<T>::Vae(VaeConfig config, const std::string& prefix) : config_(config) {
  const auto& ch = config_.channels;
  for (int c : ch) {
    if (c <= 0) throw ConfigError("vae channel widths must be positive");
  }
  if (config_.latent <= 0 || config_.dense_width <= 0) throw ConfigError("vae latent and dense width must be positive");
  const std::string e = prefix + ".enc.";
  const std::string d = prefix + ".dec.";
  enc_conv1_ = nn::Conv2d<T>(e + "conv1", config_.in_channels, ch[0], 4, 2);
  enc_bn1_ = nn::BatchNorm2d<T>(e + "bn1", ch[0]);
  enc_conv2_ = nn::Conv2d<T>(e + "conv2", ch[0], ch[1], 4, 2);
  enc_bn2_ = nn::BatchNorm2d<T>(e + "bn2", ch[1]);
  enc_conv3_ = nn::Conv2d<T>(e + "conv3", ch[1], ch[2], 5, 2);
  enc_bn3_ = nn::BatchNorm2d<T>(e + "bn3", ch[2]);
  enc_conv4_ = nn::Conv2d<T>(e + "conv4", ch[2], ch[3], 3, 2);
  enc_dense_ = nn::Dense<T>(e + "dense", ch[3], config_.dense_width);
  enc_mu_ = nn::Dense<T>(e + "mu", config_.dense_width, config_.latent);
  enc_logvar_ = nn::Dense<T>(e + "logvar", config_.dense_width, config_.latent);

  dec_dense1_ = nn::Dense<T>(d + "dense1", config_.latent, config_.dense_width);
  dec_dense2_ = nn::Dense<T>(d + "dense2", config_.dense_width, ch[3]);
  dec_deconv1_ = nn::Deconv2d<T>(d + "deconv1", ch[3], ch[2], 3, 2);
  dec_bn1_ = nn::BatchNorm2d<T>(d + "bn1", ch[2]);
  dec_deconv2_ = nn::Deconv2d<T>(d + "deconv2", ch[2], ch[1], 5, 2);
  dec_bn2_ = nn::BatchNorm2d<T>(d + "bn2", ch[1]);
  dec_deconv3_ = nn::Deconv2d<T>(d + "deconv3", ch[1], ch[0], 4, 2);
  dec_bn3_ = nn::BatchNorm2d<T>(d + "bn3", ch[0]);
  dec_deconv4_ = nn::Deconv2d<T>(d + "deconv4", ch[0], config_.in_channels, 4, 2);
  dec_bn4_ = nn::BatchNorm2d<T>(d + "bn4", config_.in_channels);
}

template <typename T>
void Vae<T>::init(std::mt19937_64& rng) {
  enc_conv1_.init(rng);
  enc_bn1_.init(rng);
  enc_conv2_.init(rng);
  enc_bn2_.init(rng);
  enc_conv3_.init(rng);
  enc_bn3_.init(rng);
  enc_conv4_.init(rng);
  enc_dense_.init(rng);
  enc_mu_.init(rng);
  enc_logvar_.init(rng);
  dec_dense1_.init(rng);
  dec_dense2_.init(rng);
  dec_deconv1_.init(rng);
  dec_bn1_.init(rng);
  dec_deconv2_.init(rng);
  dec_bn2_.init(rng);
  dec_deconv3_.init(rng);
  dec_bn3_.init(rng);
  dec_deconv4_.init(rng);
  dec_bn4_.init(rng);
}

template <typename T>
typename Vae<T>::Encoded Vae<T>::encode(nn::Tape<T>& tape, Var x, bool training) {
  const nn::Shape& in = tape.shape(x);
  if (in.size() != 4 || in[1] != config_.in_channels || in[2] != 42 || in[3] != 42) {
    throw ConfigError("vae encoder expects (B, " + std::to_string(config_.in_channels) + ", 42, 42), got " +
                      nn::shape_string(in));
  }
  auto block = [&](nn::Conv2d<T>& conv, nn::BatchNorm2d<T>* bn, Var h) {
    h = traced(tape, "conv", h, conv.forward(tape, h));
    if (bn) h = traced(tape, "batchnorm", h, bn->forward(tape, h, training));
    return traced(tape, "relu", h, nn::relu(tape, h));
  };
  Var h = block(enc_conv1_, &enc_bn1_, x);
  h = block(enc_conv2_, &enc_bn2_, h);
  h = block(enc_conv3_, &enc_bn3_, h);
  h = block(enc_conv4_, nullptr, h);
  h = nn::reshape(tape, h, nn::Shape{in[0], config_.channels[3]});
  h = traced(tape, "dense", h, enc_dense_.forward(tape, h));
  Encoded out;
  out.mu = traced(tape, "dense mu", h, enc_mu_.forward(tape, h));
  out.logvar = traced(tape, "dense logvar", h, enc_logvar_.forward(tape, h));
  out.logvar = nn::clamp(tape, out.logvar, T(kLogVarMin), T(kLogVarMax));
  return out;
}

template <typename T>
Var Vae<T>::sample(nn::Tape<T>& tape, const Encoded& enc, const nn::Tensor<T>& eps) {
  if (eps.shape() != tape.shape(enc.mu)) throw ConfigError("vae sample: noise shape mismatch");
  Var std_dev = nn::exp(tape, nn::scale(tape, enc.logvar, T(0.5)));
  return nn::add(tape, enc.mu, nn::mul(tape, std_dev, tape.constant(eps)));
}

template <typename T>
Var Vae<T>::decode(nn::Tape<T>& tape, Var z, bool training) {
  const nn::Shape& in = tape.shape(z);
  if (in.size() != 2 || in[1] != config_.latent) {
    throw ConfigError("vae decoder expects (B, " + std::to_string(config_.latent) + "), got " + nn::shape_string(in));
  }
  Var h = traced(tape, "dense", z, dec_dense1_.forward(tape, z));
  h = traced(tape, "dense", h, dec_dense2_.forward(tape, h));
  h = nn::reshape(tape, h, nn::Shape{in[0], config_.channels[3], 1, 1});
  auto block = [&](nn::Deconv2d<T>& deconv, nn::BatchNorm2d<T>& bn, Var h, bool relu) {
    h = traced(tape, "deconv", h, deconv.forward(tape, h));
    h = traced(tape, "batchnorm", h, bn.forward(tape, h, training));
    return relu ? traced(tape, "relu", h, nn::relu(tape, h)) : h;
  };
  h = block(dec_deconv1_, dec_bn1_, h, true);
  h = block(dec_deconv2_, dec_bn2_, h, true);
  h = block(dec_deconv3_, dec_bn3_, h, true);
  h = block(dec_deconv4_, dec_bn4_, h, config_.relu_before_sigmoid);
  return traced(tape, "sigmoid", h, nn::sigmoid(tape, h));
}

template <typename T>
nn::StateRefs<T> Vae<T>::encoder_state() {
  nn::StateRefs<T> s;
  s.append(enc_conv1_.state());
  s.append(enc_bn1_.state());
  s.append(enc_conv2_.state());
  s.append(enc_bn2_.state());
  s.append(enc_conv3_.state());
  s.append(enc_bn3_.state());
  s.append(enc_conv4_.state());
  s.append(enc_dense_.state());
  s.append(enc_mu_.state());
  s.append(enc_logvar_.state());
  return s;
}

template <typename T>
nn::StateRefs<T> Vae<T>::decoder_state() {
  nn::StateRefs<T> s;
  s.append(dec_dense1_.state());
  s.append(dec_dense2_.state());
  s.append(dec_deconv1_.state());
  s.append(dec_bn1_.state());
  s.append(dec_deconv2_.state());
  s.append(dec_bn2_.state());
  s.append(dec_deconv3_.state());
  s.append(dec_bn3_.state());
  s.append(dec_deconv4_.state());
  s.append(dec_bn4_.state());
  return s;
}

template <typename T>
nn::StateRefs<T> Vae<T>::state() {
  nn::StateRefs<T> s = encoder_state();
  s.append(decoder_state());
  return s;
}

template <typename T>
Var Vae<T>::traced(nn::Tape<T>& tape, const char* type, Var in, Var out) {
  if (trace_) trace_->push_back({type, tape.shape(in), tape.shape(out)});
  return out;
}

template <typename T>
std::vector<LayerShape> Vae<T>::layer_shapes() {
  std::vector<LayerShape> rows;
  trace_ = &rows;
  nn::Tape<T> tape(false);
  const Encoded enc = encode(tape, tape.constant(nn::Tensor<T>(nn::Shape{1, config_.in_channels, 42, 42})), false);
  decode(tape, enc.mu, false);
  trace_ = nullptr;
  return rows;
}

template class Vae<float>;
template class Vae<double>;

}  // namespace fepr::agent
