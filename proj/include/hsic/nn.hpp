#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hsic/autodiff.hpp"
#include "hsic/rng.hpp"
#include "hsic/tensor.hpp"

namespace hsic::nn {

/// Fully connected layer, weight stored out×in.
struct Linear {
    Tensor weight;
    Tensor bias;

    std::size_t in() const { return weight.dim(1); }
    std::size_t out() const { return weight.dim(0); }
};

/// Uniform(−1/√fan_in, 1/√fan_in) for weights and biases.
inline Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    Linear l{Tensor({out, in}), Tensor({out})};
    for (auto& w : l.weight.data()) w = (2.0f * rng.uniform_float() - 1.0f) * bound;
    for (auto& b : l.bias.data()) b = (2.0f * rng.uniform_float() - 1.0f) * bound;
    return l;
}

struct LinearVars {
    ad::Var weight;
    ad::Var bias;
};

/// Names and addresses of a model's tensors, in a fixed order.
using NamedParams = std::vector<std::pair<std::string, Tensor*>>;
using ConstNamedParams = std::vector<std::pair<std::string, const Tensor*>>;

/// Trainable tensors bound onto one tape; gradients are read back in order.
struct Binding {
    std::vector<Tensor*> params;
    std::vector<ad::Var> vars;

    std::vector<Tensor> grads(const ad::Tape& tape) const {
        std::vector<Tensor> out;
        out.reserve(vars.size());
        for (ad::Var v : vars) out.push_back(tape.grad(v));
        return out;
    }
};

template <class T>
LinearVars bind(ad::BasicTape<T>& tape, const Linear& l, bool trainable) {
    auto w = l.weight.cast<T>();
    auto b = l.bias.cast<T>();
    if (trainable) return {tape.parameter(std::move(w)), tape.parameter(std::move(b))};
    return {tape.constant(std::move(w)), tape.constant(std::move(b))};
}

/// Float-tape overload that also registers the layer for the optimiser.
inline LinearVars bind(ad::Tape& tape, Linear& l, bool trainable, Binding& binding) {
    LinearVars vars = bind<float>(tape, l, trainable);
    if (trainable) {
        binding.params.push_back(&l.weight);
        binding.vars.push_back(vars.weight);
        binding.params.push_back(&l.bias);
        binding.vars.push_back(vars.bias);
    }
    return vars;
}

template <class T>
ad::Var apply(ad::BasicTape<T>& tape, const LinearVars& l, ad::Var x) {
    return ad::affine(tape, x, l.weight, l.bias);
}

/// Training mode carries the generator that drives dropout masks.
struct ForwardMode {
    bool training = false;
    Rng* rng = nullptr;
};

template <class T>
ad::Var maybe_dropout(ad::BasicTape<T>& tape, ad::Var x, double rate, const ForwardMode& mode) {
    if (!mode.training || rate == 0.0) return x;
    return ad::dropout(tape, x, rate, *mode.rng, true);
}

}  // namespace hsic::nn
