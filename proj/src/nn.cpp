#include "fsrel/nn.hpp"

#include <cmath>

namespace fsrel::nn {

Mlp::Mlp(ad::ParameterStore& store, const std::string& name, int in, int hidden, int out, bool trainable,
         Activation act)
    : in_(in), hidden_(hidden), out_(out), act_(act) {
    w1_ = &store.add(name + ".w1", hidden, in, trainable);
    b1_ = &store.add(name + ".b1", hidden, 1, trainable);
    w2_ = &store.add(name + ".w2", out, hidden, trainable);
    b2_ = &store.add(name + ".b2", out, 1, trainable);
}

ad::Var Mlp::hidden_from_pre(ad::Tape& tape, ad::Var pre) const {
    return act_ == Activation::Tanh ? tape.tanh(pre) : pre;
}

ad::Var Mlp::output_from_hidden(ad::Tape& tape, ad::Var hidden) const {
    return tape.affine(*w2_, hidden, b2_);
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) const {
    return output_from_hidden(tape, hidden_from_pre(tape, tape.affine(*w1_, x, b1_)));
}

void Mlp::init(std::mt19937_64& rng) const {
    init_lecun(*w1_, rng);
    init_lecun(*w2_, rng);
    b1_->value.setZero();
    b2_->value.setZero();
}

void init_lecun(ad::Parameter& w, std::mt19937_64& rng, double gain) {
    std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(w.value.cols())));
    for (Eigen::Index i = 0; i < w.value.size(); ++i) w.value.data()[i] = normal(rng);
}

void init_normal(ad::Parameter& p, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = normal(rng);
}

}  // namespace fsrel::nn
