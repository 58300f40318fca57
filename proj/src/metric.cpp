#include "bido/metric.hpp"

#include <cmath>

#include "bido/error.hpp"

namespace bido {
namespace {

Tensor lower_mask(std::size_t h) {
    Tensor m({h, h});
    auto v = m.mutable_values();
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j <= i; ++j) v[i * h + j] = 1.0;
    return m;
}

Tensor pair_distances(const Tensor& embeddings, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                      const MetricFactor& f) {
    std::vector<std::size_t> left, right;
    left.reserve(pairs.size());
    right.reserve(pairs.size());
    for (auto [i, j] : pairs) {
        left.push_back(i);
        right.push_back(j);
    }
    return mahalanobis(gather_rows(embeddings, left), gather_rows(embeddings, right), f);
}

}  // namespace

Tensor MetricFactor::lower() const { return hadamard(factor, lower_mask(dim())); }

void MetricFactor::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    out.push_back({prefix + ".factor", factor});
}

MetricFactor make_metric(std::size_t h, double epsilon_d) {
    Tensor l({h, h}, true);
    auto v = l.mutable_values();
    for (std::size_t i = 0; i < h; ++i) v[i * h + i] = 1.0;
    return {l, epsilon_d};
}

Tensor mahalanobis(const Tensor& a, const Tensor& b, const MetricFactor& f) {
    if (a.rank() != 2 || a.shape() != b.shape() || a.dim(1) != f.dim()) {
        throw Error(ErrorCode::ShapeMismatch, "mahalanobis " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    // Row vector diff * L is (L^T diff)^T.
    Tensor y = matmul(sub(a, b), f.lower());
    Tensor q = sum(hadamard(y, y), 1);
    return sqrt(add_scalar(q, f.epsilon_d));
}

double mahalanobis(std::span<const double> a, std::span<const double> b, const MetricFactor& f) {
    if (a.size() != b.size() || a.size() != f.dim()) throw Error(ErrorCode::ShapeMismatch, "mahalanobis");
    NoGradGuard guard;
    Tensor ta({1, a.size()}, {a.begin(), a.end()});
    Tensor tb({1, b.size()}, {b.begin(), b.end()});
    return mahalanobis(ta, tb, f)[0];
}

PairSets build_pairs(std::span<const int> labels, double margin) {
    if (labels.size() < 2) throw Error(ErrorCode::DegenerateBatch, "pairs need at least two samples");
    PairSets p;
    p.margin = margin;
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            (labels[i] == labels[j] ? p.positive : p.negative).emplace_back(i, j);
        }
    return p;
}

Tensor contrastive_loss(const Tensor& embeddings, std::span<const int> labels, const MetricFactor& f, double margin) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
        throw Error(ErrorCode::ShapeMismatch, "contrastive_loss embeddings " + shape_str(embeddings.shape()));
    }
    const PairSets pairs = build_pairs(labels, margin);
    Tensor loss;
    if (!pairs.positive.empty()) {
        loss = mean_all(pair_distances(embeddings, pairs.positive, f));
    }
    if (!pairs.negative.empty()) {
        Tensor hinge = mean_all(relu(add_scalar(scale(pair_distances(embeddings, pairs.negative, f), -1.0), margin)));
        loss = loss.defined() ? add(loss, hinge) : hinge;
    }
    return loss;
}

}  // namespace bido
