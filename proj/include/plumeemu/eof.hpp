#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>

#include "plumeemu/linalg.hpp"
#include "plumeemu/plume.hpp"

namespace plumeemu {

/// Truncated SVD of the plume matrix B (N x K), B ~ U_r D_r V_r^T.
/// No mean-centering: B is decomposed directly.
struct EofBasis {
    std::size_t r = 0;
    GridSpec grid;
    /// r values, non-increasing.
    linalg::Vector singular_values;
    /// r x K, orthonormal rows.
    linalg::Matrix right_vectors;
    /// N x r, rows of U_r for the training plumes.
    linalg::Matrix train_coeffs;

    std::size_t cells() const { return static_cast<std::size_t>(right_vectors.cols()); }
};

/// N x K matrix with one plume per row.
linalg::Matrix plume_matrix(const PlumeSet& set);
PlumeSet plumes_from_matrix(const linalg::Matrix& rows, const GridSpec& grid);

EofBasis fit_eof(const linalg::Matrix& b, std::size_t r);
EofBasis fit_eof(const PlumeSet& set, std::size_t r);

/// coeffs (M x r) -> coeffs * D_r * V_r^T (M x K).
linalg::Matrix reconstruct(const EofBasis& basis, const linalg::Matrix& coeffs);
PlumeSet reconstruct_plumes(const EofBasis& basis, const linalg::Matrix& coeffs);

/// Least-squares coefficients for new plumes: b * V_r * D_r^{-1}.
linalg::Matrix regress_coefficients(const EofBasis& basis, const linalg::Matrix& rows);
linalg::Matrix regress_coefficients(const EofBasis& basis, const PlumeSet& set);

/// EOFBASIS1 binary format.
void write_eof_basis(std::ostream& os, const EofBasis& basis);
EofBasis read_eof_basis(std::istream& is);
void save_eof_basis(const std::string& path, const EofBasis& basis);
EofBasis load_eof_basis(const std::string& path);

}  // namespace plumeemu
