#include "plumeemu/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "plumeemu/error.hpp"

namespace plumeemu::linalg {
namespace {

// Fills the columns of q flagged as undefined with unit vectors orthogonal to every
// other column (modified Gram-Schmidt against canonical basis candidates).
void complete_orthonormal(Matrix& q, const std::vector<bool>& defined) {
    const Eigen::Index m = q.rows();
    Eigen::Index candidate = 0;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        if (defined[static_cast<std::size_t>(j)]) continue;
        for (;; ++candidate) {
            if (candidate >= m) throw NumericError("svd: cannot complete orthonormal basis");
            Vector v = Vector::Unit(m, candidate);
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index k = 0; k < q.cols(); ++k) {
                    if (k == j || (!defined[static_cast<std::size_t>(k)] && k > j)) continue;
                    v -= q.col(k).dot(v) * q.col(k);
                }
            const double norm = v.norm();
            if (norm > 1e-8) {
                q.col(j) = v / norm;
                ++candidate;
                break;
            }
        }
    }
}

// Hestenes Jacobi on a tall matrix (rows >= cols).
Svd jacobi_tall(const Matrix& a, double tol, int max_sweeps) {
    Matrix w = a;
    const Eigen::Index n = w.cols();
    Matrix v = Matrix::Identity(n, n);
    bool converged = n < 2;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double alpha = w.col(p).squaredNorm();
                const double beta = w.col(q).squaredNorm();
                const double gamma = w.col(p).dot(w.col(q));
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index i = 0; i < w.rows(); ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) throw NumericError("svd: Jacobi sweeps did not converge");

    Vector sv(n);
    for (Eigen::Index j = 0; j < n; ++j) sv(j) = w.col(j).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return sv(x) > sv(y); });

    const double smax = n > 0 ? sv(order[0]) : 0.0;
    const double zero_tol = smax * 1e-15 * static_cast<double>(std::max(a.rows(), a.cols()));
    Svd out;
    out.u = Matrix::Zero(a.rows(), n);
    out.s = Vector::Zero(n);
    out.v = Matrix::Zero(n, n);
    std::vector<bool> defined(static_cast<std::size_t>(n), true);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index j = order[static_cast<std::size_t>(k)];
        out.v.col(k) = v.col(j);
        if (sv(j) > zero_tol && sv(j) > 0.0) {
            out.s(k) = sv(j);
            out.u.col(k) = w.col(j) / sv(j);
        } else {
            defined[static_cast<std::size_t>(k)] = false;
        }
    }
    complete_orthonormal(out.u, defined);
    return out;
}

}  // namespace

Svd jacobi_svd(const Matrix& a, double tol, int max_sweeps) {
    if (a.rows() == 0 || a.cols() == 0) throw DimensionError("svd: empty matrix");
    if (!a.allFinite()) throw NumericError("svd: matrix has non-finite entries");
    if (a.rows() >= a.cols()) return jacobi_tall(a, tol, max_sweeps);
    Svd t = jacobi_tall(a.transpose(), tol, max_sweeps);
    return Svd{std::move(t.v), std::move(t.s), std::move(t.u)};
}

std::optional<Matrix> cholesky(const Matrix& a) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n) throw DimensionError("cholesky: matrix not square");
    Matrix l = Matrix::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = a(j, j);
        for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

Vector forward_substitute(const Matrix& lower, const Vector& b) {
    const Eigen::Index n = lower.rows();
    if (b.size() != n) throw DimensionError("forward_substitute: length mismatch");
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double s = b(i);
        for (Eigen::Index k = 0; k < i; ++k) s -= lower(i, k) * x(k);
        x(i) = s / lower(i, i);
    }
    return x;
}

Matrix cholesky_solve(const Matrix& lower, const Matrix& b) {
    const Eigen::Index n = lower.rows();
    if (b.rows() != n) throw DimensionError("cholesky_solve: row mismatch");
    Matrix x = b;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = x(i, c);
            for (Eigen::Index k = 0; k < i; ++k) s -= lower(i, k) * x(k, c);
            x(i, c) = s / lower(i, i);
        }
        for (Eigen::Index i = n; i-- > 0;) {
            double s = x(i, c);
            for (Eigen::Index k = i + 1; k < n; ++k) s -= lower(k, i) * x(k, c);
            x(i, c) = s / lower(i, i);
        }
    }
    return x;
}

}  // namespace plumeemu::linalg
