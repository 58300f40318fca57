#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bido/rng.hpp"
#include "bido/tensor.hpp"

namespace bido::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    Tensor t(std::move(shape), grad);
    for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero, for inputs that feed a kink.
inline Tensor away_from_zero(Shape shape, Rng& rng, double gap = 0.05, bool grad = true) {
    Tensor t(std::move(shape), grad);
    for (double& v : t.mutable_values()) {
        const double m = rng.uniform(gap, 1.0);
        v = rng.bernoulli(0.5) ? m : -m;
    }
    return t;
}

struct GradReport {
    double worst = 0.0;
    std::size_t checked = 0;
    std::string where;
};

inline constexpr double kFdStep = 1e-4;
inline constexpr double kFdTolerance = 1e-4;
// Denominator floor: gradients below this are compared absolutely.
inline constexpr double kFdFloor = 1e-3;

// Compares the tape gradient of fn() with respect to each input against
// central differences. fn must rebuild its graph from the inputs each call.
inline GradReport gradcheck(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                            std::size_t max_per_input = 64) {
    for (Tensor& t : inputs) t.zero_grad();
    Tensor out = fn();
    if (out.size() != 1) throw std::invalid_argument("gradcheck needs a scalar objective");
    out.backward();
    GradReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& t = inputs[k];
        const std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                          : std::vector<double>(t.size(), 0.0);
        const std::size_t stride = std::max<std::size_t>(1, t.size() / max_per_input);
        for (std::size_t i = 0; i < t.size(); i += stride) {
            auto v = t.mutable_values();
            const double orig = v[i];
            double plus, minus;
            {
                NoGradGuard guard;
                v[i] = orig + kFdStep;
                plus = fn().item();
                v[i] = orig - kFdStep;
                minus = fn().item();
                v[i] = orig;
            }
            const double numeric = (plus - minus) / (2.0 * kFdStep);
            const double err =
                std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), kFdFloor});
            ++report.checked;
            if (err > report.worst) {
                report.worst = err;
                report.where = "input " + std::to_string(k) + " element " + std::to_string(i) + " analytic " +
                               std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return report;
}

// Scalar probe: sum(out * w) with fixed random weights.
inline Tensor probe(const Tensor& out, const Tensor& w) { return sum_all(hadamard(out, w)); }

}  // namespace bido::test
