#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bido/optim.hpp"
#include "bido/rng.hpp"
#include "bido/svd.hpp"
#include "bido/tensor.hpp"

namespace bido {

inline constexpr double kFusionNormEpsilon = 1e-12;

// Frobenius-normalized outer product: rows follow Z_xml (h), columns Z_dex (l).
struct OpsMatrix {
    Matrix d;
    double norm = 0.0;  // Frobenius norm before normalization
};

OpsMatrix ops_matrix(std::span<const double> zx, std::span<const double> zd);

// Learnable rank-R factor pairs: column (kk * R + r) of `u` is u_{kk,r} in
// R^h and the same column of `v` is v_{kk,r} in R^l.
struct FactorBank {
    std::size_t rank = 1;
    Tensor u;  // [h, h * R]
    Tensor v;  // [l, h * R]

    std::size_t outputs() const { return u.dim(1) / rank; }
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// U(±1/sqrt(R * dim)) per factor.
FactorBank make_factor_bank(std::size_t h, std::size_t l, std::size_t rank, Rng& rng);

// Z_ops[kk] = sum_r (u_{kk,r} . zx)(v_{kk,r} . zd) / max(|zx| |zd|, eps)
//           = sum_r <D, u_{kk,r} v_{kk,r}^T>_F
// zx: [B, h], zd: [B, l] -> [B, h]. The h x l matrix is never formed.
Tensor factorize(const Tensor& zx, const Tensor& zd, const FactorBank& bank);

// Reference path through a materialized OpsMatrix (single sample, no autodiff).
std::vector<double> factorize_materialized(std::span<const double> zx, std::span<const double> zd,
                                           const FactorBank& bank);

struct SvdReport {
    std::vector<double> singular_values;
    std::size_t numerical_rank = 0;  // count above tolerance * s[0]
};

SvdReport svd_analysis(const OpsMatrix& d, std::size_t rank, double tolerance = 1e-10);
SvdReport svd_analysis(const Matrix& d, std::size_t rank, double tolerance = 1e-10);

}  // namespace bido
