#pragma once

// Exact desk-scale references: dual kernel PCA on the Gram matrix, dense
// eigen/SVD/CCA solvers, a quadrature discretization of the kernel
// covariance operator for 1-D Gaussian data, and the explicitly
// orthogonalized power step used by the first-order probe.
//
// Sign convention everywhere: within each returned column, the first entry
// of largest absolute value is made positive.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "dskca/kernel_features.hpp"

namespace dskca {

namespace detail {

inline void fix_column_signs(Matrix& M) {
  for (Index j = 0; j < M.cols(); ++j) {
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < M.rows(); ++i) {
      const double a = std::abs(M(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (M(arg, j) < 0.0) M.col(j) = -M.col(j);
  }
}

inline void require_symmetric(const Matrix& C, double tol, const char* who) {
  if (C.rows() != C.cols()) {
    throw std::invalid_argument(std::string(who) + ": matrix must be square");
  }
  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  if ((C - C.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw std::invalid_argument(std::string(who) + ": matrix is not symmetric");
  }
}

}  // namespace detail

// Top-k eigenpairs of a symmetric matrix, eigenvalues descending,
// orthonormal eigenvectors with the sign convention above.
inline std::pair<Vector, Matrix> dense_topk_eig(const Matrix& C, Index k) {
  detail::require_symmetric(C, 1e-8, "dense_topk_eig");
  if (k < 1 || k > C.rows()) {
    throw std::invalid_argument("dense_topk_eig: bad k");
  }
  const Matrix S = 0.5 * (C + C.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("dense_topk_eig: eigensolver failed");
  }
  Vector values(k);
  Matrix vectors(C.rows(), k);
  const Index n = C.rows();
  for (Index i = 0; i < k; ++i) {
    values[i] = eig.eigenvalues()[n - 1 - i];
    vectors.col(i) = eig.eigenvectors().col(n - 1 - i);
  }
  detail::fix_column_signs(vectors);
  return {std::move(values), std::move(vectors)};
}

struct SvdTopK {
  Matrix U;      // rows(M) x k
  Vector sigma;  // descending
  Matrix V;      // cols(M) x k
};

// Top-k SVD. Internally asserts the block-operator relation: the symmetric
// matrix [[0, M'], [M, 0]] maps the stacked vectors (v; u)/sqrt(2) to
// sigma * (v; u)/sqrt(2).
inline SvdTopK dense_svd_topk(const Matrix& M, Index k) {
  if (k < 1 || k > std::min(M.rows(), M.cols())) {
    throw std::invalid_argument("dense_svd_topk: bad k");
  }
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdTopK out;
  out.U = svd.matrixU().leftCols(k);
  out.sigma = svd.singularValues().head(k);
  out.V = svd.matrixV().leftCols(k);
  for (Index j = 0; j < k; ++j) {
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < out.U.rows(); ++i) {
      if (std::abs(out.U(i, j)) > best) {
        best = std::abs(out.U(i, j));
        arg = i;
      }
    }
    if (out.U(arg, j) < 0.0) {
      out.U.col(j) = -out.U.col(j);
      out.V.col(j) = -out.V.col(j);
    }
  }

  const Index r = M.rows(), c = M.cols();
  Matrix B = Matrix::Zero(r + c, r + c);
  B.topRightCorner(c, r) = M.transpose();
  B.bottomLeftCorner(r, c) = M;
  const double scale = std::max(1.0, out.sigma[0]);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(B);
  for (Index i = 0; i < k; ++i) {
    const double top = eig.eigenvalues()[r + c - 1 - i];
    const double bottom = eig.eigenvalues()[i];
    if (std::abs(top - out.sigma[i]) > 1e-10 * scale ||
        std::abs(bottom + out.sigma[i]) > 1e-10 * scale) {
      throw std::runtime_error(
          "dense_svd_topk: block-operator eigenvalues disagree with SVD");
    }
    Vector w(r + c);
    w.head(c) = out.V.col(i);
    w.tail(r) = out.U.col(i);
    w /= std::numbers::sqrt2;
    if ((B * w - out.sigma[i] * w).cwiseAbs().maxCoeff() > 1e-8 * scale) {
      throw std::runtime_error(
          "dense_svd_topk: stacked singular vectors fail the block relation");
    }
  }
  return out;
}

struct CcaSolution {
  Vector correlations;  // descending, in [0, 1]
  Matrix directions_x;  // normalized so g' Cxx g = 1
  Matrix directions_y;
};

// Canonical correlation analysis from covariance blocks. Directions are
// whitened singular vectors of Cxx^{-1/2} Cxy Cyy^{-1/2}. Internally asserts
// that the stacked generalized eigenvalues of ([Cxx Cxy; Cyx Cyy], diag) are
// 1 + sigma_i.
inline CcaSolution dense_cca(const Matrix& Cxx, const Matrix& Cyy,
                             const Matrix& Cxy, Index k) {
  detail::require_symmetric(Cxx, 1e-8, "dense_cca(Cxx)");
  detail::require_symmetric(Cyy, 1e-8, "dense_cca(Cyy)");
  const Index dx = Cxx.rows(), dy = Cyy.rows();
  if (Cxy.rows() != dx || Cxy.cols() != dy) {
    throw std::invalid_argument("dense_cca: Cxy shape mismatch");
  }
  if (k < 1 || k > std::min(dx, dy)) {
    throw std::invalid_argument("dense_cca: bad k");
  }
  Eigen::LLT<Matrix> lx(0.5 * (Cxx + Cxx.transpose()));
  Eigen::LLT<Matrix> ly(0.5 * (Cyy + Cyy.transpose()));
  if (lx.info() != Eigen::Success || ly.info() != Eigen::Success) {
    throw std::invalid_argument(
        "dense_cca: Cxx/Cyy not positive definite (add ridge)");
  }
  const Matrix Lx = lx.matrixL();
  const Matrix Ly = ly.matrixL();
  const Matrix R = Lx.triangularView<Eigen::Lower>().solve(Matrix(
      Ly.triangularView<Eigen::Lower>().solve(Cxy.transpose()).transpose()));
  Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeThinU | Eigen::ComputeThinV);

  CcaSolution out;
  out.correlations = svd.singularValues().head(k);
  for (Index i = 0; i < k; ++i) {
    if (out.correlations[i] > 1.0 + 1e-8) {
      throw std::invalid_argument(
          "dense_cca: correlation exceeds 1; covariance blocks inconsistent");
    }
    out.correlations[i] = std::min(out.correlations[i], 1.0);
  }
  out.directions_x =
      Lx.transpose().triangularView<Eigen::Upper>().solve(svd.matrixU().leftCols(k));
  out.directions_y =
      Ly.transpose().triangularView<Eigen::Upper>().solve(svd.matrixV().leftCols(k));
  for (Index j = 0; j < k; ++j) {
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < dx; ++i) {
      if (std::abs(out.directions_x(i, j)) > best) {
        best = std::abs(out.directions_x(i, j));
        arg = i;
      }
    }
    if (out.directions_x(arg, j) < 0.0) {
      out.directions_x.col(j) = -out.directions_x.col(j);
      out.directions_y.col(j) = -out.directions_y.col(j);
    }
  }

  // Consistency: stacked generalized eigenvalues are 1 + sigma.
  Matrix A(dx + dy, dx + dy);
  A.topLeftCorner(dx, dx) = Cxx;
  A.topRightCorner(dx, dy) = Cxy;
  A.bottomLeftCorner(dy, dx) = Cxy.transpose();
  A.bottomRightCorner(dy, dy) = Cyy;
  Matrix Bm = Matrix::Zero(dx + dy, dx + dy);
  Bm.topLeftCorner(dx, dx) = Cxx;
  Bm.bottomRightCorner(dy, dy) = Cyy;
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> gen(0.5 * (A + A.transpose()),
                                                       0.5 * (Bm + Bm.transpose()));
  if (gen.info() != Eigen::Success) {
    throw std::runtime_error("dense_cca: generalized eigensolver failed");
  }
  for (Index i = 0; i < k; ++i) {
    const double mu = gen.eigenvalues()[dx + dy - 1 - i];
    if (std::abs(mu - (1.0 + out.correlations[i])) > 1e-8 * (1.0 + out.correlations[i])) {
      throw std::runtime_error(
          "dense_cca: generalized eigenvalues disagree with 1 + correlation");
    }
  }
  return out;
}

// Exact kernel PCA in dual form: top-k eigenpairs of (1/n) K with
// coefficients normalized to unit RKHS norm (alpha' K alpha = 1).
struct DualEigenSolution {
  Matrix points;       // n x dim expansion anchors
  Matrix coeffs;       // n x k
  Vector eigenvalues;  // descending eigenvalues of (1/n) K
  Matrix gram;         // n x n

  // Eigenfunction values at arbitrary points: f_i(x) = sum_j coeffs(j,i) k(x_j, x).
  Matrix evaluate_at(const KernelSpec& spec, const Matrix& X) const {
    Matrix cross(X.rows(), points.rows());
    for (Index a = 0; a < X.rows(); ++a) {
      for (Index b = 0; b < points.rows(); ++b) {
        cross(a, b) = kernel_eval(spec, X.row(a), points.row(b));
      }
    }
    return cross * coeffs;
  }
};

inline DualEigenSolution dual_kpca(const Matrix& data, const KernelSpec& spec,
                                   Index k) {
  const Index n = data.rows();
  if (n < 1) throw std::invalid_argument("dual_kpca: empty data");
  if (n > 5000) throw std::invalid_argument("dual_kpca: n > 5000 (dense oracle)");
  if (k < 1 || k > n) throw std::invalid_argument("dual_kpca: bad k");

  DualEigenSolution out;
  out.gram = gram_matrix(spec, data);
  out.points = data;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(out.gram / static_cast<double>(n));
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("dual_kpca: eigensolver failed");
  }
  const double min_eig = eig.eigenvalues()[0] * static_cast<double>(n);
  if (min_eig < -1e-8 * static_cast<double>(n)) {
    throw std::runtime_error("dual_kpca: Gram matrix is not PSD within tolerance");
  }
  out.eigenvalues.resize(k);
  out.coeffs.resize(n, k);
  const double top = eig.eigenvalues()[n - 1];
  for (Index i = 0; i < k; ++i) {
    const double lam = eig.eigenvalues()[n - 1 - i];
    if (lam <= 1e-12 * std::max(1.0, top)) {
      throw std::runtime_error(
          "dual_kpca: requested component lies in the numerical null space");
    }
    out.eigenvalues[i] = lam;
    out.coeffs.col(i) = eig.eigenvectors().col(n - 1 - i) /
                        std::sqrt(static_cast<double>(n) * lam);
  }
  detail::fix_column_signs(out.coeffs);
  return out;
}

// Quadrature discretization of the covariance operator of a Gaussian-kernel
// family under a 1-D Gaussian data density: solve W^{1/2} K W^{1/2} u = lam u
// on a trapezoid grid over [mu - 8 sd, mu + 8 sd], W = diag(weight * density).
// Eigenfunction values on the grid are W^{-1/2} u, unit L2(density) norm.
struct QuadratureEig {
  KernelSpec spec;
  Vector grid;         // g points
  Vector mass;         // quadrature weight times density at each grid point
  Vector eigenvalues;  // descending
  Matrix functions;    // g x k eigenfunction values on the grid

  // Nystrom extension to arbitrary points (m x 1).
  Matrix extend(const Matrix& X) const {
    if (X.cols() != 1) {
      throw std::invalid_argument("QuadratureEig::extend: points must be 1-D");
    }
    Matrix cross(X.rows(), grid.size());
    Vector gx(1), gz(1);
    for (Index a = 0; a < X.rows(); ++a) {
      gx[0] = X(a, 0);
      for (Index b = 0; b < grid.size(); ++b) {
        gz[0] = grid[b];
        cross(a, b) = kernel_eval(spec, gx, gz);
      }
    }
    return cross * (functions.array().colwise() * mass.array()).matrix() *
           eigenvalues.cwiseInverse().asDiagonal();
  }
};

namespace detail {

inline QuadratureEig quadrature_solve(const KernelSpec& spec, double mu,
                                      double sigma_data, Index grid_size,
                                      Index k) {
  QuadratureEig out;
  out.spec = spec;
  out.grid.resize(grid_size);
  out.mass.resize(grid_size);
  const double lo = mu - 8.0 * sigma_data;
  const double hi = mu + 8.0 * sigma_data;
  const double h = (hi - lo) / static_cast<double>(grid_size - 1);
  for (Index j = 0; j < grid_size; ++j) {
    const double z = lo + h * static_cast<double>(j);
    const double w = (j == 0 || j == grid_size - 1) ? 0.5 * h : h;
    const double rho = std::exp(-0.5 * (z - mu) * (z - mu) / (sigma_data * sigma_data)) /
                       (sigma_data * std::sqrt(2.0 * std::numbers::pi));
    out.grid[j] = z;
    out.mass[j] = w * rho;
  }
  Matrix X(grid_size, 1);
  X.col(0) = out.grid;
  const Matrix K = gram_matrix(spec, X);
  const Vector s = out.mass.cwiseSqrt();
  const Matrix S = s.asDiagonal() * K * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (S + S.transpose()));
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("quadrature_operator_eig: eigensolver failed");
  }
  out.eigenvalues.resize(k);
  out.functions.resize(grid_size, k);
  for (Index i = 0; i < k; ++i) {
    const double lam = eig.eigenvalues()[grid_size - 1 - i];
    if (lam <= 0.0) {
      throw std::runtime_error(
          "quadrature_operator_eig: nonpositive eigenvalue; grid too coarse");
    }
    out.eigenvalues[i] = lam;
    out.functions.col(i) = eig.eigenvectors().col(grid_size - 1 - i).cwiseQuotient(s);
  }
  fix_column_signs(out.functions);
  return out;
}

}  // namespace detail

// Validated quadrature: solves at grid_size and 2*grid_size, errors if the
// top-k eigenvalues shift by more than 1%, and returns the finer solution.
inline QuadratureEig quadrature_operator_eig(const KernelSpec& spec, double mu,
                                             double sigma_data, Index grid_size,
                                             Index k) {
  if (spec.dim != 1) {
    throw std::invalid_argument("quadrature_operator_eig: spec must be 1-D");
  }
  if (!(sigma_data > 0.0)) {
    throw std::invalid_argument("quadrature_operator_eig: sigma_data must be > 0");
  }
  if (grid_size < 200) {
    throw std::invalid_argument("quadrature_operator_eig: grid_size must be >= 200");
  }
  if (k < 1 || k > grid_size) {
    throw std::invalid_argument("quadrature_operator_eig: bad k");
  }
  const QuadratureEig coarse = detail::quadrature_solve(spec, mu, sigma_data, grid_size, k);
  QuadratureEig fine = detail::quadrature_solve(spec, mu, sigma_data, 2 * grid_size, k);
  for (Index i = 0; i < k; ++i) {
    const double shift = std::abs(coarse.eigenvalues[i] - fine.eigenvalues[i]) /
                         fine.eigenvalues[i];
    if (shift > 0.01) {
      throw std::runtime_error(
          "quadrature_operator_eig: eigenvalues shift more than 1% when the "
          "grid doubles; increase grid_size");
    }
  }
  return fine;
}

// Explicitly orthogonalized power step: F' = (F + eta A F) O^{-1/2} with
// O the Gram matrix of the updated columns (symmetric orthogonalizer).
inline Matrix reference_orthogonalized_step(const Matrix& F, const Matrix& A,
                                            double eta) {
  detail::require_symmetric(A, 1e-8, "reference_orthogonalized_step");
  if (A.rows() != F.rows()) {
    throw std::invalid_argument("reference_orthogonalized_step: shape mismatch");
  }
  const Matrix Ft = F + eta * (A * F);
  const Matrix O = Ft.transpose() * Ft;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (O + O.transpose()));
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("reference_orthogonalized_step: eigensolver failed");
  }
  const double lmax = eig.eigenvalues().maxCoeff();
  if (eig.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, lmax)) {
    throw std::runtime_error(
        "reference_orthogonalized_step: updated columns are rank deficient");
  }
  const Matrix inv_sqrt = eig.eigenvectors() *
                          eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                          eig.eigenvectors().transpose();
  return Ft * inv_sqrt;
}

}  // namespace dskca
