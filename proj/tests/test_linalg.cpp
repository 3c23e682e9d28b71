#include <catch2/catch_amalgamated.hpp>

#include "fedprotip/linalg.hpp"

using namespace fedprotip;
using linalg::Matrix;
using linalg::Vector;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  auto eng = rng::make_engine(seed);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng::normal(eng);
  return m;
}

Matrix random_orthonormal(Eigen::Index rows, Eigen::Index cols,
                          std::uint64_t seed) {
  return linalg::orthonormalize_columns(random_matrix(rows, cols, seed), 1e-10);
}

}  // namespace

TEST_CASE("exact_svd: identity and diagonal cases") {
  auto id = linalg::exact_svd(Matrix::Identity(2, 2));
  REQUIRE(id.s(0) == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(id.s(1) == Catch::Approx(1.0).margin(1e-14));

  Matrix d(2, 2);
  d << 3, 0, 0, 1;
  auto r = linalg::exact_svd(d);
  REQUIRE(r.s(0) == Catch::Approx(3.0).margin(1e-14));
  REQUIRE(r.s(1) == Catch::Approx(1.0).margin(1e-14));
  // columns of u are +-standard basis vectors
  REQUIRE((r.u.cwiseAbs() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <
          1e-14);
}

TEST_CASE("exact_svd: reconstruction oracle on random 6x4") {
  const Matrix a = random_matrix(6, 4, 42);
  auto r = linalg::exact_svd(a);
  const Matrix rec = r.u * r.s.asDiagonal() * r.vt;
  REQUIRE((rec - a).norm() / a.norm() <= 1e-8);
  REQUIRE(linalg::has_orthonormal_columns(r.u, 1e-10));
  // singular values sorted descending, non-negative
  for (Eigen::Index i = 0; i + 1 < r.s.size(); ++i)
    REQUIRE(r.s(i) >= r.s(i + 1));
  REQUIRE(r.s(r.s.size() - 1) >= 0.0);
}

TEST_CASE("exact_svd: input validation") {
  REQUIRE_THROWS_AS(linalg::exact_svd(Matrix(0, 3)), DimensionError);
  Matrix bad = Matrix::Ones(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(linalg::exact_svd(bad), NumericalError);
}

TEST_CASE("randomized_svd: matches exact_svd on an exact-rank-5 matrix") {
  const Matrix a = random_matrix(50, 5, 7) * random_matrix(5, 20, 8);
  linalg::RandomizedSvdConfig cfg;
  cfg.target_rank = 5;
  cfg.oversampling = 10;
  cfg.power_iterations = 2;
  cfg.seed = 11;
  auto approx = linalg::randomized_svd(a, cfg);
  auto exact = linalg::exact_svd(a);
  for (Eigen::Index i = 0; i < 5; ++i)
    REQUIRE(std::abs(approx.s(i) - exact.s(i)) <= 1e-6 * exact.s(i));
}

TEST_CASE("randomized_svd: zero matrix and embedded diagonal") {
  linalg::RandomizedSvdConfig cfg;
  cfg.target_rank = 3;
  cfg.oversampling = 5;
  cfg.seed = 1;
  auto z = linalg::randomized_svd(Matrix::Zero(10, 10), cfg);
  REQUIRE(z.s.cwiseAbs().maxCoeff() == 0.0);

  Matrix d = Matrix::Zero(4, 4);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  linalg::RandomizedSvdConfig cfg2;
  cfg2.target_rank = 2;
  cfg2.oversampling = 2;
  cfg2.power_iterations = 2;
  cfg2.seed = 5;
  auto r = linalg::randomized_svd(d, cfg2);
  REQUIRE(std::abs(r.s(0) - 3.0) <= 1e-10);
  REQUIRE(std::abs(r.s(1) - 1.0) <= 1e-10);
}

TEST_CASE("randomized_svd: rank request exceeding dimensions") {
  linalg::RandomizedSvdConfig cfg;
  cfg.target_rank = 8;
  cfg.oversampling = 10;
  REQUIRE_THROWS_AS(linalg::randomized_svd(Matrix::Ones(10, 10), cfg),
                    DimensionError);
}

TEST_CASE("randomized_svd: singular values never exceed exact ones") {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const Matrix a = random_matrix(30, 12, seed);
    linalg::RandomizedSvdConfig cfg;
    cfg.target_rank = 4;
    cfg.oversampling = 6;
    cfg.power_iterations = 1;
    cfg.seed = seed + 100;
    auto approx = linalg::randomized_svd(a, cfg);
    auto exact = linalg::exact_svd(a);
    for (Eigen::Index i = 0; i < cfg.target_rank; ++i)
      REQUIRE(approx.s(i) <= exact.s(i) + 1e-8);
  }
}

TEST_CASE("project_onto_complement: empty basis is a bit-exact passthrough") {
  const Matrix g = random_matrix(5, 3, 9);
  const Matrix out = linalg::project_onto_complement(g, Matrix(5, 0));
  REQUIRE(std::memcmp(out.data(), g.data(), sizeof(double) * g.size()) == 0);
  const Matrix out2 = linalg::project_onto_complement(g, Matrix(0, 0));
  REQUIRE(std::memcmp(out2.data(), g.data(), sizeof(double) * g.size()) == 0);
}

TEST_CASE("project_onto_complement: coordinate-axis projection") {
  Matrix basis(2, 1);
  basis << 1, 0;
  Matrix g(2, 1);
  g << 3, 4;
  const Matrix out = linalg::project_onto_complement(g, basis);
  REQUIRE(out(0, 0) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(out(1, 0) == Catch::Approx(4.0).margin(1e-15));
}

TEST_CASE("project_onto_complement: residual orthogonality oracle") {
  const Matrix basis = random_orthonormal(16, 5, 21);
  const Matrix g = random_matrix(16, 7, 22);
  const Matrix out = linalg::project_onto_complement(g, basis);
  REQUIRE((basis.transpose() * out).norm() <= 1e-12);
}

TEST_CASE("project_onto_complement: contract errors") {
  REQUIRE_THROWS_AS(
      linalg::project_onto_complement(Matrix::Ones(4, 2), Matrix::Ones(3, 1)),
      DimensionError);
  Matrix skew(3, 2);
  skew << 1, 1, 0, 1, 0, 0;
  REQUIRE_THROWS_AS(linalg::project_onto_complement(Matrix::Ones(3, 2), skew),
                    ContractError);
}

TEST_CASE("orthonormalize_columns: duplicate and dependent columns") {
  Matrix dup(3, 2);
  dup << 1, 1, 0, 0, 0, 0;
  const Matrix q = linalg::orthonormalize_columns(dup, 1e-8);
  REQUIRE(q.cols() == 1);
  REQUIRE(q(0, 0) == Catch::Approx(1.0).margin(1e-14));

  Matrix mixed(2, 2);
  mixed << 1, 1, 0, 1;  // [e1, e1 + e2]
  const Matrix q2 = linalg::orthonormalize_columns(mixed, 1e-8);
  REQUIRE(q2.cols() == 2);
  REQUIRE((q2.col(0) - Eigen::Vector2d(1, 0)).norm() <= 1e-14);
  REQUIRE((q2.col(1) - Eigen::Vector2d(0, 1)).norm() <= 1e-14);
}

TEST_CASE("orthonormalize_columns: fixed point and empty input") {
  const Matrix q = random_orthonormal(10, 4, 31);
  const Matrix q2 = linalg::orthonormalize_columns(q, 1e-8);
  REQUIRE(q2.cols() == q.cols());
  REQUIRE((q2 - q).cwiseAbs().maxCoeff() <= 1e-12);

  REQUIRE(linalg::orthonormalize_columns(Matrix(4, 0), 1e-8).cols() == 0);
}

TEST_CASE("complement projector is idempotent and non-expansive") {
  for (Eigen::Index dim : {4, 16, 64}) {
    const Matrix basis = random_orthonormal(dim, dim / 2, 100 + dim);
    const Matrix p =
        Matrix::Identity(dim, dim) - basis * basis.transpose();
    REQUIRE((p * p - p).norm() <= 1e-10);

    auto eng = rng::make_engine(200 + dim);
    for (int k = 0; k < 20; ++k) {
      Vector x(dim);
      for (Eigen::Index i = 0; i < dim; ++i) x(i) = rng::normal(eng);
      REQUIRE((p * x).norm() <= x.norm() + 1e-12);
    }

    const Matrix g = random_matrix(dim, 3, 300 + dim);
    const Matrix once = linalg::project_onto_complement(g, basis);
    const Matrix twice = linalg::project_onto_complement(once, basis);
    REQUIRE((twice - once).cwiseAbs().maxCoeff() <= 1e-12);
  }
}
