#pragma once

/**
 * @brief Dense linear-algebra kernel shared by every other module.
 *
 * All matrices are Eigen::MatrixXd, which stores entries in column-major
 * order. Functions here are pure and reentrant.
 */

#include <ddpc/error.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ddpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

inline void require_finite(const Matrix& m, const char* what)
{
    if (!m.allFinite()) {
        throw InvalidInput(std::string(what) + ": matrix contains NaN or Inf");
    }
}

/// Default relative truncation threshold used by pinv(): eps * max(rows, cols).
inline double default_pinv_tolerance(Eigen::Index rows, Eigen::Index cols)
{
    return std::numeric_limits<double>::epsilon() *
           static_cast<double>(std::max<Eigen::Index>({rows, cols, 1}));
}

/// Singular values of `m` in decreasing order.
inline Vector singular_values(const Matrix& m)
{
    require_finite(m, "singular_values");
    if (m.size() == 0) {
        return Vector();
    }
    Eigen::BDCSVD<Matrix> svd(m);
    return svd.singularValues();
}

/**
 * @brief Moore-Penrose pseudo-inverse through a truncated SVD.
 *
 * Singular values below rel_tol * sigma_max are treated as zero. When
 * rel_tol is empty the default_pinv_tolerance() of the matrix shape is used.
 */
inline Matrix pinv(const Matrix& m, std::optional<double> rel_tol = std::nullopt)
{
    require_finite(m, "pinv");
    if (m.size() == 0) {
        return Matrix::Zero(m.cols(), m.rows());
    }
    const double tol = rel_tol.value_or(default_pinv_tolerance(m.rows(), m.cols()));
    if (!(tol > 0.0)) {
        throw InvalidInput("pinv: tolerance must be positive");
    }
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double cutoff = tol * s(0);
    Vector s_inv = Vector::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > cutoff && s(i) > 0.0) {
            s_inv(i) = 1.0 / s(i);
        }
    }
    return svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
}

/// Numerical rank with the same truncation rule as pinv().
inline Eigen::Index rank(const Matrix& m, std::optional<double> rel_tol = std::nullopt)
{
    const Vector s = singular_values(m);
    if (s.size() == 0 || s(0) == 0.0) {
        return 0;
    }
    const double cutoff = rel_tol.value_or(default_pinv_tolerance(m.rows(), m.cols())) * s(0);
    return (s.array() > cutoff).count();
}

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-10)
{
    if (m.rows() != m.cols()) {
        return false;
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// Upper-triangular V with V^T V = p.
inline Matrix cholesky(const Matrix& p)
{
    require_finite(p, "cholesky");
    if (!is_symmetric(p)) {
        throw FactorizationError("cholesky: matrix is not symmetric");
    }
    Eigen::LLT<Matrix> llt(p);
    if (llt.info() != Eigen::Success) {
        throw FactorizationError("cholesky: matrix is not positive definite");
    }
    return llt.matrixU();
}

/// Solves g * X = rhs for symmetric positive definite g.
inline Matrix solve_spd(const Matrix& g, const Matrix& rhs)
{
    require_finite(g, "solve_spd");
    require_finite(rhs, "solve_spd");
    if (g.rows() != rhs.rows()) {
        throw InvalidInput("solve_spd: row count of rhs does not match");
    }
    if (!is_symmetric(g)) {
        throw FactorizationError("solve_spd: matrix is not symmetric");
    }
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() != Eigen::Success) {
        throw FactorizationError("solve_spd: matrix is not positive definite");
    }
    return llt.solve(rhs);
}

inline Matrix kron(const Matrix& a, const Matrix& b)
{
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

inline Matrix block_diag(const std::vector<Matrix>& blocks)
{
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    for (const auto& b : blocks) {
        rows += b.rows();
        cols += b.cols();
    }
    Matrix out = Matrix::Zero(rows, cols);
    Eigen::Index r = 0;
    Eigen::Index c = 0;
    for (const auto& b : blocks) {
        out.block(r, c, b.rows(), b.cols()) = b;
        r += b.rows();
        c += b.cols();
    }
    return out;
}

/// `count` copies of `b` along the diagonal.
inline Matrix repeat_diag(const Matrix& b, Eigen::Index count)
{
    return kron(Matrix::Identity(count, count), b);
}

/// Stacks the columns of a (rows x T) trajectory window into one vector.
inline Vector vec(const Matrix& m)
{
    return Eigen::Map<const Vector>(m.data(), m.size());
}

}  // namespace linalg
}  // namespace ddpc
