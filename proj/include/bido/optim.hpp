#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bido/tensor.hpp"

namespace bido {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct OptimizerState {
    double base_lr = 0.001;
    double learning_rate = 0.001;
    double momentum = 0.9;
    double decay_factor = 0.9;
    std::size_t decay_every = 2;  // epochs
    std::vector<std::vector<double>> velocity;  // one buffer per parameter, created lazily
};

// base_lr * decay_factor^floor(epoch / decay_every)
double scheduled_lr(const OptimizerState& state, std::size_t epoch);
// Sets learning_rate for a zero-based epoch index.
void begin_epoch(OptimizerState& state, std::size_t epoch);

// v <- momentum * v + g;  p <- p - lr * v
void sgd_momentum_update(std::span<double> param, std::span<const double> grad, std::vector<double>& velocity,
                         double learning_rate, double momentum);

// Applies one step to every parameter using its accumulated gradient (an
// absent gradient counts as zero). Throws Error{ShapeMismatch} when the
// velocity layout no longer matches, Error{NonFinite} on a non-finite gradient.
void sgd_momentum_step(std::span<NamedParam> params, OptimizerState& state);

}  // namespace bido
