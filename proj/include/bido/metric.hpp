#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bido/optim.hpp"
#include "bido/tensor.hpp"

namespace bido {

// Lambda = L L^T with L the lower triangle of `factor`; the strict upper
// triangle is masked out of every forward pass, so it never trains.
struct MetricFactor {
    Tensor factor;  // [h, h]
    double epsilon_d = 1e-12;

    std::size_t dim() const { return factor.dim(0); }
    Tensor lower() const;
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// Starts at the identity (Euclidean metric).
MetricFactor make_metric(std::size_t h, double epsilon_d = 1e-12);

// Row-wise d(a_p, b_p) = sqrt(|L^T (a_p - b_p)|^2 + eps_d); a, b: [P, h] -> [P].
Tensor mahalanobis(const Tensor& a, const Tensor& b, const MetricFactor& f);
double mahalanobis(std::span<const double> a, std::span<const double> b, const MetricFactor& f);

struct PairSets {
    std::vector<std::pair<std::size_t, std::size_t>> positive;
    std::vector<std::pair<std::size_t, std::size_t>> negative;
    double margin = 1.0;
};

// Every unordered pair (i < j), split by label equality.
// Throws Error{DegenerateBatch} for fewer than two labels.
PairSets build_pairs(std::span<const int> labels, double margin = 1.0);

// mean_P d + mean_N max(0, m - d); an empty pair set contributes zero.
Tensor contrastive_loss(const Tensor& embeddings, std::span<const int> labels, const MetricFactor& f, double margin);

}  // namespace bido
