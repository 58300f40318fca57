#include "bido/fusion.hpp"

#include <cmath>

#include "bido/error.hpp"
#include "bido/nn.hpp"

namespace bido {

OpsMatrix ops_matrix(std::span<const double> zx, std::span<const double> zd) {
    OpsMatrix out{Matrix(zx.size(), zd.size()), 0.0};
    double sq = 0.0;
    for (std::size_t i = 0; i < zx.size(); ++i)
        for (std::size_t j = 0; j < zd.size(); ++j) {
            const double v = zx[i] * zd[j];
            out.d(i, j) = v;
            sq += v * v;
        }
    out.norm = std::sqrt(sq);
    if (out.norm > 0.0) {
        for (double& v : out.d.data) v /= out.norm;
    }
    return out;
}

void FactorBank::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    out.push_back({prefix + ".u", u});
    out.push_back({prefix + ".v", v});
}

FactorBank make_factor_bank(std::size_t h, std::size_t l, std::size_t rank, Rng& rng) {
    if (rank == 0 || h == 0 || l == 0) throw Error(ErrorCode::BadConfig, "factor bank needs R, h, l >= 1");
    FactorBank bank;
    bank.rank = rank;
    bank.u = nn::uniform_param({h, h * rank}, 1.0 / std::sqrt(static_cast<double>(rank * h)), rng);
    bank.v = nn::uniform_param({l, h * rank}, 1.0 / std::sqrt(static_cast<double>(rank * l)), rng);
    return bank;
}

Tensor factorize(const Tensor& zx, const Tensor& zd, const FactorBank& bank) {
    if (zx.rank() != 2 || zd.rank() != 2 || zx.dim(0) != zd.dim(0) || zx.dim(1) != bank.u.dim(0) ||
        zd.dim(1) != bank.v.dim(0)) {
        throw Error(ErrorCode::ShapeMismatch, "factorize " + shape_str(zx.shape()) + " x " + shape_str(zd.shape()));
    }
    const std::size_t b = zx.dim(0);
    const std::size_t outputs = bank.outputs();
    Tensor projected = hadamard(matmul(zx, bank.u), matmul(zd, bank.v));  // [B, h*R]
    Tensor pooled = sum(reshape(projected, {b, outputs, bank.rank}), 2);  // [B, h]
    Tensor nu = clamp_min(hadamard(l2norm(zx), l2norm(zd)), kFusionNormEpsilon);
    return div(pooled, reshape(nu, {b, 1}));
}

std::vector<double> factorize_materialized(std::span<const double> zx, std::span<const double> zd,
                                           const FactorBank& bank) {
    const std::size_t h = zx.size(), l = zd.size();
    if (h != bank.u.dim(0) || l != bank.v.dim(0)) throw Error(ErrorCode::ShapeMismatch, "factorize_materialized");
    const OpsMatrix ops = ops_matrix(zx, zd);
    const std::size_t cols = bank.u.dim(1);
    const auto u = bank.u.values();
    const auto v = bank.v.values();
    std::vector<double> out(bank.outputs(), 0.0);
    for (std::size_t kk = 0; kk < bank.outputs(); ++kk) {
        for (std::size_t r = 0; r < bank.rank; ++r) {
            const std::size_t col = kk * bank.rank + r;
            double inner = 0.0;  // <D, u v^T>_F
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < l; ++j) inner += ops.d(i, j) * u[i * cols + col] * v[j * cols + col];
            out[kk] += inner;
        }
    }
    return out;
}

SvdReport svd_analysis(const Matrix& d, std::size_t rank, double tolerance) {
    const SvdResult r = svd_truncated(d, rank);
    SvdReport report{r.s, 0};
    const double top = r.s.empty() ? 0.0 : r.s[0];
    for (double s : r.s)
        if (top > 0.0 && s > tolerance * top) ++report.numerical_rank;
    return report;
}

SvdReport svd_analysis(const OpsMatrix& d, std::size_t rank, double tolerance) {
    return svd_analysis(d.d, rank, tolerance);
}

}  // namespace bido
