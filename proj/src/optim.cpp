#include "bido/optim.hpp"

#include <cmath>

#include "bido/error.hpp"

namespace bido {

double scheduled_lr(const OptimizerState& state, std::size_t epoch) {
    const std::size_t steps = state.decay_every == 0 ? 0 : epoch / state.decay_every;
    return state.base_lr * std::pow(state.decay_factor, static_cast<double>(steps));
}

void begin_epoch(OptimizerState& state, std::size_t epoch) { state.learning_rate = scheduled_lr(state, epoch); }

void sgd_momentum_update(std::span<double> param, std::span<const double> grad, std::vector<double>& velocity,
                         double learning_rate, double momentum) {
    if (velocity.empty()) velocity.assign(param.size(), 0.0);
    if (velocity.size() != param.size() || (!grad.empty() && grad.size() != param.size())) {
        throw Error(ErrorCode::ShapeMismatch, "velocity/gradient size does not match parameter");
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        if (!std::isfinite(g)) throw Error(ErrorCode::NonFinite, "gradient");
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= learning_rate * velocity[i];
    }
}

void sgd_momentum_step(std::span<NamedParam> params, OptimizerState& state) {
    if (state.velocity.empty()) state.velocity.resize(params.size());
    if (state.velocity.size() != params.size()) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer tracks a different parameter set");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        sgd_momentum_update(t.mutable_values(), t.grad(), state.velocity[i], state.learning_rate, state.momentum);
    }
}

}  // namespace bido
