#pragma once

#include <cstddef>
#include <vector>

namespace bido {

// Row-major dense matrix for the non-differentiable linear algebra paths.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct SvdResult {
    Matrix u;                 // rows x rank, orthonormal columns
    std::vector<double> s;    // descending, non-negative
    Matrix v;                 // cols x rank, orthonormal columns
    std::size_t sweeps = 0;
};

struct SvdOptions {
    std::size_t max_sweeps = 100;
    double tolerance = 1e-12;  // relative off-diagonal threshold
};

// One-sided Jacobi (Hestenes) SVD truncated to the leading `rank` triplets.
// Throws Error{ShapeMismatch} if rank > min(rows, cols), Error{NoConvergence}
// when the sweep cap is reached.
SvdResult svd_truncated(const Matrix& a, std::size_t rank, SvdOptions opts = {});

}  // namespace bido
