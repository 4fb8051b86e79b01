#pragma once

#include <optional>

#include <Eigen/Dense>

namespace plumeemu::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thin singular value decomposition a = u * diag(s) * v^T with s non-increasing.
/// u is m x p, v is n x p, p = min(m, n). Columns belonging to zero singular values
/// are completed to an orthonormal set.
struct Svd {
    Matrix u;
    Vector s;
    Matrix v;
};

/// One-sided (Hestenes) Jacobi SVD. Throws NumericError if sweeps do not converge.
Svd jacobi_svd(const Matrix& a, double tol = 1e-14, int max_sweeps = 100);

/// Lower-triangular Cholesky factor, or nullopt if `a` is not numerically positive definite.
std::optional<Matrix> cholesky(const Matrix& a);

/// Solves (L L^T) x = b for a lower-triangular factor L.
Matrix cholesky_solve(const Matrix& lower, const Matrix& b);

/// Solves L x = b by forward substitution.
Vector forward_substitute(const Matrix& lower, const Vector& b);

}  // namespace plumeemu::linalg
