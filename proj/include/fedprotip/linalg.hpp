#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <string>

#include "fedprotip/errors.hpp"
#include "fedprotip/rng.hpp"

// Dense matrix kernel: exact SVD, randomized SVD, orthonormalization and
// complement projection. Everything here is a pure function of its inputs.
namespace fedprotip::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct SvdResult {
  Matrix u;   // left singular vectors, orthonormal columns
  Vector s;   // non-negative, non-increasing
  Matrix vt;  // right singular vectors, transposed
};

struct RandomizedSvdConfig {
  Index target_rank = 1;
  Index oversampling = 10;
  Index power_iterations = 2;
  std::uint64_t seed = 0;
};

inline std::string shape_string(const Matrix& a) {
  return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

inline void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite())
    throw NumericalError(std::string(what) + ": non-finite entries in " +
                         shape_string(a) + " matrix");
}

inline bool has_orthonormal_columns(const Matrix& m, double tol) {
  if (m.cols() == 0) return true;
  Matrix g = m.transpose() * m;
  g.diagonal().array() -= 1.0;
  return g.cwiseAbs().maxCoeff() <= tol;
}

// Thin SVD. Jacobi iterations give full double precision at the matrix sizes
// this library works with; this routine doubles as the accuracy oracle for
// randomized_svd.
inline SvdResult exact_svd(const Matrix& a) {
  if (a.rows() < 1 || a.cols() < 1)
    throw DimensionError("exact_svd: matrix must be at least 1x1, got " +
                         shape_string(a));
  require_finite(a, "exact_svd");
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericalError("exact_svd: no convergence on " + shape_string(a) +
                         " matrix");
  return {svd.matrixU(), svd.singularValues(), svd.matrixV().transpose()};
}

namespace detail {

// Counter-based Gaussian test matrix: entry (i, j) depends only on (key, i, j).
inline Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t key) {
  Matrix g(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i)
      g(i, j) = rng::normal_at(key, static_cast<std::uint64_t>(j) *
                                        static_cast<std::uint64_t>(rows) +
                                    static_cast<std::uint64_t>(i));
  return g;
}

inline Matrix thin_q(const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qr(y);
  return qr.householderQ() *
         Matrix::Identity(y.rows(), std::min(y.rows(), y.cols()));
}

}  // namespace detail

// Gaussian range finder with power iterations (re-orthonormalized every
// half-step), then an exact SVD of the small projected matrix. Returns the
// top target_rank triples.
inline SvdResult randomized_svd(const Matrix& a,
                                const RandomizedSvdConfig& cfg) {
  if (cfg.target_rank < 1)
    throw DimensionError("randomized_svd: target_rank must be >= 1");
  if (cfg.oversampling < 0 || cfg.power_iterations < 0)
    throw DimensionError("randomized_svd: negative oversampling or iterations");
  const Index mindim = std::min(a.rows(), a.cols());
  if (cfg.target_rank + cfg.oversampling > mindim)
    throw DimensionError(
        "randomized_svd: target_rank + oversampling = " +
        std::to_string(cfg.target_rank + cfg.oversampling) +
        " exceeds min dimension of " + shape_string(a));
  require_finite(a, "randomized_svd");

  const Index sketch = cfg.target_rank + cfg.oversampling;
  const std::uint64_t key = rng::derive_key(cfg.seed, {0x72737664ULL});
  Matrix q = detail::thin_q(a * detail::gaussian_matrix(a.cols(), sketch, key));
  for (Index it = 0; it < cfg.power_iterations; ++it) {
    q = detail::thin_q(a.transpose() * q);
    q = detail::thin_q(a * q);
  }
  const Matrix b = q.transpose() * a;  // sketch x cols
  SvdResult small = exact_svd(b);
  SvdResult out;
  out.u = q * small.u.leftCols(cfg.target_rank);
  out.s = small.s.head(cfg.target_rank);
  out.vt = small.vt.topRows(cfg.target_rank);
  return out;
}

// g - basis (basis^T g). An empty basis is a bit-exact passthrough: no
// floating-point work at all, which makes the first task of a projected run
// identical to an unprojected one.
inline Matrix project_onto_complement(const Matrix& g, const Matrix& basis) {
  if (basis.cols() == 0) return g;
  if (basis.rows() != g.rows())
    throw DimensionError("project_onto_complement: basis has " +
                         std::to_string(basis.rows()) + " rows, operand has " +
                         std::to_string(g.rows()));
  if (!has_orthonormal_columns(basis, 1e-8))
    throw ContractError(
        "project_onto_complement: basis columns are not orthonormal");
  return g - basis * (basis.transpose() * g);
}

// Modified Gram-Schmidt with one re-orthogonalization pass. Columns whose
// residual norm falls below drop_tol are dropped.
inline Matrix orthonormalize_columns(const Matrix& m, double drop_tol) {
  require_finite(m, "orthonormalize_columns");
  if (m.cols() == 0) return Matrix(m.rows(), 0);
  Matrix q(m.rows(), m.cols());
  Index r = 0;
  for (Index j = 0; j < m.cols(); ++j) {
    Vector v = m.col(j);
    for (int pass = 0; pass < 2; ++pass)
      for (Index i = 0; i < r; ++i) v -= q.col(i).dot(v) * q.col(i);
    const double n = v.norm();
    if (n < drop_tol) continue;
    q.col(r++) = v / n;
  }
  return q.leftCols(r);
}

}  // namespace fedprotip::linalg
