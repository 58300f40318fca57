#include "bido/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bido/error.hpp"

namespace bido {
namespace {

using Columns = std::vector<std::vector<double>>;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Replaces col with a unit vector orthogonal to basis[0..count).
void orthonormal_completion(std::vector<double>& col, const Columns& basis, std::size_t count) {
    const std::size_t m = col.size();
    for (std::size_t e = 0; e < m; ++e) {
        std::fill(col.begin(), col.end(), 0.0);
        col[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < count; ++j) {
                const double proj = dot(col, basis[j]);
                for (std::size_t i = 0; i < m; ++i) col[i] -= proj * basis[j][i];
            }
        }
        const double norm = std::sqrt(dot(col, col));
        if (norm > 1e-6) {
            for (double& x : col) x /= norm;
            return;
        }
    }
}

// Hestenes iteration on a tall (m >= n) matrix given as n columns.
SvdResult jacobi_tall(Columns w, std::size_t m, std::size_t rank, const SvdOptions& opts) {
    const std::size_t n = w.size();
    Columns v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    std::size_t sweep = 0;
    for (;; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = dot(w[p], w[p]);
                const double beta = dot(w[q], w[q]);
                const double gamma = dot(w[p], w[q]);
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= opts.tolerance * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w[p][i];
                    const double wq = w[q][i];
                    w[p][i] = c * wp - s * wq;
                    w[q][i] = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[p][i];
                    const double vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
        if (sweep + 1 >= opts.max_sweeps) {
            throw Error(ErrorCode::NoConvergence, "Jacobi SVD exceeded " + std::to_string(opts.max_sweeps) + " sweeps");
        }
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(w[j], w[j]));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    SvdResult r;
    r.sweeps = sweep + 1;
    r.u = Matrix(m, rank);
    r.v = Matrix(n, rank);
    r.s.resize(rank);
    Columns ucols(rank, std::vector<double>(m, 0.0));
    const double tiny = (sigma.empty() ? 0.0 : sigma[order[0]]) * 1e-300;
    for (std::size_t k = 0; k < rank; ++k) {
        const std::size_t j = order[k];
        r.s[k] = sigma[j];
        if (sigma[j] > tiny && sigma[j] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) ucols[k][i] = w[j][i] / sigma[j];
        } else {
            orthonormal_completion(ucols[k], ucols, k);
        }
        for (std::size_t i = 0; i < m; ++i) r.u(i, k) = ucols[k][i];
        for (std::size_t i = 0; i < n; ++i) r.v(i, k) = v[j][i];
    }
    return r;
}

}  // namespace

SvdResult svd_truncated(const Matrix& a, std::size_t rank, SvdOptions opts) {
    if (a.data.size() != a.rows * a.cols) throw Error(ErrorCode::ShapeMismatch, "matrix buffer size");
    if (rank > std::min(a.rows, a.cols)) {
        throw Error(ErrorCode::ShapeMismatch, "rank " + std::to_string(rank) + " exceeds min(rows, cols)");
    }
    const bool tall = a.rows >= a.cols;
    const std::size_t m = tall ? a.rows : a.cols;
    const std::size_t n = tall ? a.cols : a.rows;
    Columns w(n, std::vector<double>(m));
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) {
            if (tall) w[c][r] = a(r, c);
            else w[r][c] = a(r, c);
        }
    SvdResult res = jacobi_tall(std::move(w), m, rank, opts);
    if (!tall) std::swap(res.u, res.v);
    return res;
}

}  // namespace bido
