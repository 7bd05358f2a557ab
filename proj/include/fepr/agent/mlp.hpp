#pragma once

#include <random>
#include <string>

#include "fepr/nn/layers.hpp"

namespace fepr::agent {

// in -> hidden -> relu -> out. Used for the transition, policy and value networks.
template <typename T>
class Mlp {
 public:
  Mlp(const std::string& name, int in, int hidden, int out)
      : fc1_(name + ".fc1", in, hidden), fc2_(name + ".fc2", hidden, out) {}
  Mlp(const Mlp&) = delete;
  Mlp& operator=(const Mlp&) = delete;

  void init(std::mt19937_64& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
  }

  nn::Var forward(nn::Tape<T>& tape, nn::Var x) { return fc2_.forward(tape, nn::relu(tape, fc1_.forward(tape, x))); }

  nn::StateRefs<T> state() {
    nn::StateRefs<T> s = fc1_.state();
    s.append(fc2_.state());
    return s;
  }

  nn::Dense<T>& output_layer() { return fc2_; }
  int in_features() const { return fc1_.in_features(); }
  int out_features() const { return fc2_.out_features(); }

 private:
  nn::Dense<T> fc1_;
  nn::Dense<T> fc2_;
};

}  // namespace fepr::agent
