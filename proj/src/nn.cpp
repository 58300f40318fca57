#include "bido/nn.hpp"

#include <cmath>

#include "bido/error.hpp"

namespace bido::nn {

Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::Relu: return relu(x);
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::Identity: return x;
    }
    return x;
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "identity" || name == "linear") return Activation::Identity;
    throw Error(ErrorCode::BadConfig, "unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
    switch (act) {
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Identity: return "identity";
    }
    return "?";
}

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape), true);
    for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
    return t;
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
    return {uniform_param({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng), Tensor({out}, true)};
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) h = activate(h, hidden);
    }
    return h;
}

void Mlp::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + "." + std::to_string(i));
}

Mlp make_mlp(const std::vector<std::size_t>& widths, Activation hidden, Rng& rng, Init init) {
    if (widths.size() < 2) throw Error(ErrorCode::BadConfig, "MLP needs at least input and output widths");
    Mlp mlp;
    mlp.hidden = hidden;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        if (init == Init::FanIn) {
            mlp.layers.push_back(make_linear(widths[i], widths[i + 1], rng));
            continue;
        }
        const bool last = i + 2 == widths.size();
        const double gain = last || hidden != Activation::Relu ? 3.0 : 6.0;
        const double bound = std::sqrt(gain / static_cast<double>(widths[i]));
        mlp.layers.push_back({uniform_param({widths[i], widths[i + 1]}, bound, rng), Tensor({widths[i + 1]}, true)});
    }
    return mlp;
}

}  // namespace bido::nn
