#include "plumeemu/eof.hpp"

#include <algorithm>
#include <fstream>
#include <vector>

#include "binary_io.hpp"
#include "plumeemu/error.hpp"

namespace plumeemu {

using linalg::Matrix;
using linalg::Vector;

Matrix plume_matrix(const PlumeSet& set) {
    if (set.empty()) throw DimensionError("plume_matrix: empty plume set");
    set.check();
    const auto n = static_cast<Eigen::Index>(set.size());
    const auto k = static_cast<Eigen::Index>(set.grid.size());
    Matrix b(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = set.plumes[static_cast<std::size_t>(i)].values;
        for (Eigen::Index j = 0; j < k; ++j) b(i, j) = v[static_cast<std::size_t>(j)];
    }
    return b;
}

PlumeSet plumes_from_matrix(const Matrix& rows, const GridSpec& grid) {
    if (static_cast<std::size_t>(rows.cols()) != grid.size())
        throw DimensionError("plumes_from_matrix: column count does not match grid");
    PlumeSet out;
    out.grid = grid;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        Plume p = Plume::zeros(grid);
        for (Eigen::Index j = 0; j < rows.cols(); ++j) p.values[static_cast<std::size_t>(j)] = rows(i, j);
        out.plumes.push_back(std::move(p));
    }
    return out;
}

EofBasis fit_eof(const Matrix& b, std::size_t r) {
    const auto p = static_cast<std::size_t>(std::min(b.rows(), b.cols()));
    if (r == 0 || r > p)
        throw ConfigError("fit_eof: r = " + std::to_string(r) + " outside [1, " + std::to_string(p) + "]");
    const auto svd = linalg::jacobi_svd(b);
    const auto rr = static_cast<Eigen::Index>(r);
    EofBasis basis;
    basis.r = r;
    basis.singular_values = svd.s.head(rr);
    basis.right_vectors = svd.v.leftCols(rr).transpose();
    basis.train_coeffs = svd.u.leftCols(rr);
    return basis;
}

EofBasis fit_eof(const PlumeSet& set, std::size_t r) {
    EofBasis basis = fit_eof(plume_matrix(set), r);
    basis.grid = set.grid;
    return basis;
}

Matrix reconstruct(const EofBasis& basis, const Matrix& coeffs) {
    if (static_cast<std::size_t>(coeffs.cols()) != basis.r)
        throw DimensionError("reconstruct: coefficients have " + std::to_string(coeffs.cols()) +
                             " columns, basis has r = " + std::to_string(basis.r));
    return coeffs * basis.singular_values.asDiagonal() * basis.right_vectors;
}

PlumeSet reconstruct_plumes(const EofBasis& basis, const Matrix& coeffs) {
    return plumes_from_matrix(reconstruct(basis, coeffs), basis.grid);
}

Matrix regress_coefficients(const EofBasis& basis, const Matrix& rows) {
    if (rows.cols() != basis.right_vectors.cols())
        throw DimensionError("regress_coefficients: plume length does not match basis");
    const double smax = basis.singular_values.size() ? basis.singular_values(0) : 0.0;
    for (Eigen::Index i = 0; i < basis.singular_values.size(); ++i)
        if (!(basis.singular_values(i) > smax * 1e-14) || basis.singular_values(i) == 0.0)
            throw NumericError("regress_coefficients: singular value " + std::to_string(i) +
                               " is zero (rank-deficient basis)");
    return rows * basis.right_vectors.transpose() * basis.singular_values.cwiseInverse().asDiagonal();
}

Matrix regress_coefficients(const EofBasis& basis, const PlumeSet& set) {
    if (basis.grid.size() != 0 && !(set.grid == basis.grid))
        throw DimensionError("regress_coefficients: plume grid does not match basis grid");
    return regress_coefficients(basis, plume_matrix(set));
}

namespace {
constexpr const char* kEofMagic = "EOFBASIS1";

void write_matrix(std::ostream& os, const Matrix& m) {
    std::vector<double> row_major(static_cast<std::size_t>(m.size()));
    std::size_t idx = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) row_major[idx++] = m(i, j);
    detail::write_f64_le(os, row_major);
}

Matrix read_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
    auto v = detail::read_f64_le(is, static_cast<std::size_t>(rows * cols), kEofMagic);
    Matrix m(rows, cols);
    std::size_t idx = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[idx++];
    return m;
}
}  // namespace

void write_eof_basis(std::ostream& os, const EofBasis& basis) {
    const auto& g = basis.grid;
    os << kEofMagic << '\n';
    os << basis.r << ',' << basis.right_vectors.cols() << ',' << basis.train_coeffs.rows() << '\n';
    os << detail::format_grid(g) << '\n';
    os << "data\n";
    std::vector<double> s(basis.singular_values.data(), basis.singular_values.data() + basis.singular_values.size());
    detail::write_f64_le(os, s);
    write_matrix(os, basis.right_vectors);
    write_matrix(os, basis.train_coeffs);
    if (!os) throw ConfigError("write_eof_basis: stream write failed");
}

EofBasis read_eof_basis(std::istream& is) {
    using detail::parse_int;
    if (detail::read_line(is, kEofMagic) != kEofMagic) throw ConfigError("not an EOFBASIS1 file (bad magic)");
    auto dims = detail::split(detail::read_line(is, kEofMagic), ',');
    if (dims.size() != 3) throw ConfigError("EOFBASIS1: malformed dimension line");
    const auto r = parse_int(dims[0], kEofMagic), k = parse_int(dims[1], kEofMagic),
               n = parse_int(dims[2], kEofMagic);
    if (r <= 0 || k <= 0 || n < 0) throw ConfigError("EOFBASIS1: invalid dimensions");
    EofBasis basis;
    basis.r = static_cast<std::size_t>(r);
    basis.grid = detail::parse_grid(detail::read_line(is, kEofMagic), kEofMagic);
    if (detail::read_line(is, kEofMagic) != "data") throw ConfigError("EOFBASIS1: missing data marker");
    auto s = detail::read_f64_le(is, static_cast<std::size_t>(r), kEofMagic);
    basis.singular_values = Eigen::Map<Vector>(s.data(), r);
    basis.right_vectors = read_matrix(is, r, k);
    basis.train_coeffs = read_matrix(is, n, r);
    return basis;
}

void save_eof_basis(const std::string& path, const EofBasis& basis) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    write_eof_basis(os, basis);
}

EofBasis load_eof_basis(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    return read_eof_basis(is);
}

}  // namespace plumeemu
