#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bido/optim.hpp"
#include "bido/rng.hpp"
#include "bido/tensor.hpp"

namespace bido::nn {

enum class Activation { Relu, Sigmoid, Identity };

Tensor activate(const Tensor& x, Activation act);
Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

// Parameter tensor filled from U(-bound, bound).
Tensor uniform_param(Shape shape, double bound, Rng& rng);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    // x [..., in] -> [..., out]
    Tensor forward(const Tensor& x) const;
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// Weight from U(±1/sqrt(in)), zero bias.
Linear make_linear(std::size_t in, std::size_t out, Rng& rng);

// Linear layers with `hidden` applied between them (not after the last).
struct Mlp {
    std::vector<Linear> layers;
    Activation hidden = Activation::Relu;

    Tensor forward(const Tensor& x) const;
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// FanIn: U(±1/sqrt(in)). He: U(±sqrt(6/in)) on layers feeding a ReLU and
// U(±sqrt(3/in)) on the output layer, so activations keep their scale.
enum class Init { FanIn, He };

// widths = {in, hidden..., out}
Mlp make_mlp(const std::vector<std::size_t>& widths, Activation hidden, Rng& rng, Init init = Init::FanIn);

}  // namespace bido::nn
