#pragma once

// Convergence diagnostics: principal-angle potentials in the Gram and
// empirical metrics, log-log rate fitting for traces, and a numerical probe
// showing that the plain stochastic update and the explicitly
// orthogonalized update agree on the potential to second order in the step.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dskca/oracles.hpp"
#include "dskca/rng.hpp"

namespace dskca {

struct DiagnosticsTrace {
  std::vector<long> iterations;
  std::vector<double> potential;  // 1 - cos^2(theta); empty when no probe set
  std::vector<double> h_norm_max;
  std::vector<double> wall_clock;  // seconds since fit start
};

namespace detail {

inline double clamp_angle(double v, const char* who) {
  if (!(v > -1e-9 && v < 1.0 + 1e-9)) {
    throw std::runtime_error(std::string(who) + ": value outside [0,1] slack");
  }
  return std::min(1.0, std::max(0.0, v));
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x,
                           const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) {
    throw std::invalid_argument("loglog_slope: need >= 2 points");
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw std::runtime_error("loglog_slope: nonpositive value");
    }
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  if (denom <= 0.0) {
    throw std::runtime_error("loglog_slope: degenerate abscissae");
  }
  return (static_cast<double>(n) * sxy - sx * sy) / denom;
}

}  // namespace detail

// cos^2 of the largest principal angle between span(V) and span(G), all
// inner products taken in the Gram metric over shared anchor points.
// V must be Gram-orthonormal; G only needs full rank.
inline double cos2_subspace_gram(const Matrix& V, const Matrix& G,
                                 const Matrix& gram) {
  const Index n = gram.rows();
  if (gram.cols() != n || V.rows() != n || G.rows() != n) {
    throw std::invalid_argument("cos2_subspace_gram: anchor count mismatch");
  }
  if (V.cols() != G.cols()) {
    throw std::invalid_argument("cos2_subspace_gram: subspace ranks differ");
  }
  const Index k = V.cols();
  const Matrix vkv = V.transpose() * gram * V;
  if ((vkv - Matrix::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-6) {
    throw std::invalid_argument(
        "cos2_subspace_gram: V is not orthonormal in the Gram metric");
  }
  const Matrix gkg = 0.5 * ((G.transpose() * gram * G) +
                            (G.transpose() * gram * G).transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eg(gkg);
  const double lmax = eg.eigenvalues().maxCoeff();
  const double lmin = eg.eigenvalues().minCoeff();
  if (!(lmin > 0.0) || lmax / lmin > 1e12) {
    throw std::runtime_error("cos2_subspace_gram: G is rank deficient");
  }
  const Matrix vkg = V.transpose() * gram * G;
  const Matrix S = vkg * eg.operatorInverseSqrt() * eg.operatorInverseSqrt() *
                   vkg.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S + S.transpose()));
  return detail::clamp_angle(es.eigenvalues().minCoeff(), "cos2_subspace_gram");
}

// sin^2 of the largest principal angle between the column spaces of two
// evaluation matrices (empirical L2 metric on the probe rows). Invariant to
// invertible k x k right-multiplication of either input.
inline double sin2_subspace_empirical(const Matrix& Ev, const Matrix& Eh) {
  if (Ev.rows() != Eh.rows() || Ev.cols() != Eh.cols()) {
    throw std::invalid_argument("sin2_subspace_empirical: shape mismatch");
  }
  const Index m = Ev.rows();
  const Index k = Ev.cols();
  if (m < k) {
    throw std::invalid_argument("sin2_subspace_empirical: need more probe rows");
  }
  auto ortho = [&](const Matrix& E, const char* side) {
    Eigen::ColPivHouseholderQR<Matrix> qr(E);
    if (qr.rank() < k) {
      throw std::runtime_error(std::string("sin2_subspace_empirical: ") + side +
                               " evaluation matrix is rank deficient");
    }
    return Matrix(qr.householderQ() * Matrix::Identity(m, k));
  };
  const Matrix qv = ortho(Ev, "reference");
  const Matrix qh = ortho(Eh, "estimate");
  Eigen::JacobiSVD<Matrix> svd(qv.transpose() * qh);
  const double smin = svd.singularValues()[k - 1];
  return detail::clamp_angle(1.0 - smin * smin, "sin2_subspace_empirical");
}

// Least-squares slope of log(potential) vs log(iteration) over the trailing
// `window` fraction of the iteration range.
inline double rate_fit(const DiagnosticsTrace& trace, double window) {
  if (!(window > 0.0 && window <= 1.0)) {
    throw std::invalid_argument("rate_fit: window must be in (0, 1]");
  }
  if (trace.iterations.empty() ||
      trace.potential.size() != trace.iterations.size()) {
    throw std::invalid_argument("rate_fit: trace has no potential series");
  }
  const double tmax = static_cast<double>(trace.iterations.back());
  const double cutoff = (1.0 - window) * tmax;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    if (static_cast<double>(trace.iterations[i]) >= cutoff) {
      const double p = trace.potential[i];
      if (!(p > 0.0)) {
        throw std::runtime_error("rate_fit: nonpositive potential in window");
      }
      xs.push_back(static_cast<double>(trace.iterations[i]));
      ys.push_back(p);
    }
  }
  if (xs.size() < 10) {
    throw std::invalid_argument("rate_fit: fewer than 10 trace points in window");
  }
  return detail::loglog_slope(xs, ys);
}

// Potential residual between the plain projected stochastic step and the
// explicitly orthogonalized step, per step size. The probe operator is
// rescaled to unit spectral norm so the largest listed step size still sits
// in the perturbative regime; the residual then scales as eta^2 (log-log
// slope >= 1.9). At the fixed point G = V with the exact covariance it
// vanishes identically.
inline std::vector<double> first_order_probe(int dim, int k, std::uint64_t seed,
                                             const std::vector<double>& etas,
                                             bool at_fixed_point = false) {
  if (dim < 1 || k < 1 || k > dim) {
    throw std::invalid_argument("first_order_probe: bad dim/k");
  }
  auto randn = [&](std::uint64_t tag_offset, Index r, Index c) {
    Matrix M(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index j = 0; j < c; ++j) {
        M(i, j) = rng::normal(seed, rng::kTagSynthetic + tag_offset,
                              static_cast<std::uint64_t>(i),
                              static_cast<std::uint64_t>(j), 0);
      }
    }
    return M;
  };
  const Matrix base = randn(0, dim, dim);
  const Matrix A = base.transpose() * base / static_cast<double>(dim);
  const auto [values, V] = dense_topk_eig(A, k);

  Matrix At, G;
  if (at_fixed_point) {
    At = A;
    G = V;
  } else {
    const Matrix bt = randn(1, dim, dim);
    At = bt.transpose() * bt / static_cast<double>(dim);
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 5 && !ok; ++attempt) {
      Matrix raw(dim, k);
      for (Index i = 0; i < dim; ++i) {
        for (Index j = 0; j < k; ++j) {
          raw(i, j) = rng::normal(seed, rng::kTagSynthetic + 2 + attempt,
                                  static_cast<std::uint64_t>(i),
                                  static_cast<std::uint64_t>(j), 0);
        }
      }
      Eigen::JacobiSVD<Matrix> svd(raw);
      if (svd.singularValues()[k - 1] > 1e-6) {
        Eigen::HouseholderQR<Matrix> qr(raw);
        G = qr.householderQ() * Matrix::Identity(dim, k);
        ok = true;
      }
    }
    if (!ok) {
      throw std::runtime_error("first_order_probe: degenerate start after 5 draws");
    }
  }
  // At is PSD by construction, so its top eigenvalue is the spectral norm.
  const double norm_at = Eigen::SelfAdjointEigenSolver<Matrix>(At)
                             .eigenvalues()
                             .maxCoeff();
  if (!(norm_at > 0.0)) {
    throw std::runtime_error("first_order_probe: degenerate probe operator");
  }
  At /= norm_at;

  const Matrix gram = Matrix::Identity(dim, dim);
  std::vector<double> residuals;
  residuals.reserve(etas.size());
  for (const double eta : etas) {
    const Matrix plain = G + eta * ((Matrix::Identity(dim, dim) - G * G.transpose()) *
                                    (At * G));
    const Matrix ortho = reference_orthogonalized_step(G, At, eta);
    const double c_plain = cos2_subspace_gram(V, plain, gram);
    const double c_ortho = cos2_subspace_gram(V, ortho, gram);
    residuals.push_back(std::abs(c_plain - c_ortho));
  }
  return residuals;
}

// Trace CSV: header row then one line per record. A trace without a
// potential series writes nan in that column.
inline void write_trace_csv(std::ostream& os, const DiagnosticsTrace& trace) {
  os << "iteration,potential,h_norm_max,seconds\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
    os << trace.iterations[i] << ',';
    if (trace.potential.empty()) {
      os << "nan";
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", trace.potential[i]);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", trace.h_norm_max[i]);
    os << ',' << buf;
    std::snprintf(buf, sizeof buf, "%.6f", trace.wall_clock[i]);
    os << ',' << buf << '\n';
  }
}

inline void write_trace_csv(const std::string& path, const DiagnosticsTrace& trace) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open trace file for writing: " + path);
  write_trace_csv(os, trace);
  if (!os.good()) throw std::runtime_error("failed writing trace file: " + path);
}

inline DiagnosticsTrace read_trace_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open trace file: " + path);
  std::string line;
  if (!std::getline(is, line)) {
    throw std::runtime_error("trace file is empty: " + path);
  }
  DiagnosticsTrace trace;
  bool any_potential = false;
  long lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) {
      throw std::runtime_error("trace file line " + std::to_string(lineno) +
                               ": expected 4 columns");
    }
    try {
      trace.iterations.push_back(std::stol(cells[0]));
      const double p = std::stod(cells[1]);
      if (!std::isnan(p)) any_potential = true;
      trace.potential.push_back(p);
      trace.h_norm_max.push_back(std::stod(cells[2]));
      trace.wall_clock.push_back(std::stod(cells[3]));
    } catch (const std::exception&) {
      throw std::runtime_error("trace file line " + std::to_string(lineno) +
                               ": non-numeric cell");
    }
  }
  if (!any_potential) trace.potential.clear();
  return trace;
}

}  // namespace dskca
