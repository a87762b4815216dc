#pragma once

#include <random>
#include <string>

#include "fsrel/autodiff.hpp"

namespace fsrel::nn {

enum class Activation { Tanh, Identity };

// Two-layer perceptron: out = W2 act(W1 x + b1) + b2, applied column-wise.
class Mlp {
public:
    Mlp() = default;
    Mlp(ad::ParameterStore& store, const std::string& name, int in, int hidden, int out, bool trainable = true,
        Activation act = Activation::Tanh);

    ad::Var forward(ad::Tape& tape, ad::Var x) const;
    // Output of the first layer before the nonlinearity, for callers that split the input.
    ad::Var hidden_from_pre(ad::Tape& tape, ad::Var pre) const;
    ad::Var output_from_hidden(ad::Tape& tape, ad::Var hidden) const;

    int in_dim() const { return in_; }
    int hidden_dim() const { return hidden_; }
    int out_dim() const { return out_; }
    ad::Parameter& w1() const { return *w1_; }
    ad::Parameter& b1() const { return *b1_; }
    ad::Parameter& w2() const { return *w2_; }
    ad::Parameter& b2() const { return *b2_; }
    Activation activation() const { return act_; }
    void set_activation(Activation a) { act_ = a; }

    void init(std::mt19937_64& rng) const;

private:
    ad::Parameter* w1_ = nullptr;
    ad::Parameter* b1_ = nullptr;
    ad::Parameter* w2_ = nullptr;
    ad::Parameter* b2_ = nullptr;
    int in_ = 0, hidden_ = 0, out_ = 0;
    Activation act_ = Activation::Tanh;
};

// LeCun-normal weights (std 1/sqrt(fan_in)), zero bias.
void init_lecun(ad::Parameter& w, std::mt19937_64& rng, double gain = 1.0);
void init_normal(ad::Parameter& p, std::mt19937_64& rng, double stddev);

}  // namespace fsrel::nn
