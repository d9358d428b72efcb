#pragma once

// Closed-form kernel evaluation and seeded random Fourier feature blocks.
//
// Shift-invariant kernels are factored through Bochner's theorem: frequencies
// are drawn from the kernel's spectral density and a feature evaluates as
// scale * sqrt(2) * cos(w'x + b) with scale = 1/sqrt(count), so the inner
// product of two feature rows is the Monte Carlo estimate of k(x,y).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dskca/rng.hpp"

namespace dskca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class KernelFamily { gaussian, laplacian, cauchy, linear };

inline std::string family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::gaussian: return "gaussian";
    case KernelFamily::laplacian: return "laplacian";
    case KernelFamily::cauchy: return "cauchy";
    case KernelFamily::linear: return "linear";
  }
  throw std::invalid_argument("unknown kernel family");
}

inline KernelFamily family_from_name(const std::string& s) {
  if (s == "gaussian") return KernelFamily::gaussian;
  if (s == "laplacian") return KernelFamily::laplacian;
  if (s == "cauchy") return KernelFamily::cauchy;
  if (s == "linear") return KernelFamily::linear;
  throw std::invalid_argument("unknown kernel family: " + s);
}

struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  double bandwidth = 1.0;  // sigma for gaussian, scale for laplacian/cauchy
  int dim = 1;
  double kappa_bound = 1.0;  // sup_x k(x,x); 1 for the shift-invariant families
};

inline KernelSpec make_kernel(KernelFamily family, double bandwidth, int dim) {
  if (dim < 1) throw std::invalid_argument("kernel dim must be >= 1");
  if (family != KernelFamily::linear &&
      !(std::isfinite(bandwidth) && bandwidth > 0.0)) {
    throw std::invalid_argument("kernel bandwidth must be positive");
  }
  KernelSpec spec;
  spec.family = family;
  spec.bandwidth = family == KernelFamily::linear ? 1.0 : bandwidth;
  spec.dim = dim;
  spec.kappa_bound = family == KernelFamily::linear
                         ? std::numeric_limits<double>::infinity()
                         : 1.0;
  return spec;
}

namespace detail {
inline void check_point(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                        const char* name) {
  if (x.size() != spec.dim) {
    throw std::invalid_argument(std::string(name) +
                                " has wrong dimension for kernel spec");
  }
  if (!x.allFinite()) {
    throw std::invalid_argument(std::string(name) + " has non-finite entries");
  }
}
}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                          const Eigen::Ref<const Vector>& y) {
  detail::check_point(spec, x, "x");
  detail::check_point(spec, y, "y");
  switch (spec.family) {
    case KernelFamily::gaussian: {
      const double d2 = (x - y).squaredNorm();
      return std::exp(-d2 / (2.0 * spec.bandwidth * spec.bandwidth));
    }
    case KernelFamily::laplacian: {
      const double d1 = (x - y).lpNorm<1>();
      return std::exp(-d1 / spec.bandwidth);
    }
    case KernelFamily::cauchy: {
      double p = 1.0;
      for (Index i = 0; i < x.size(); ++i) {
        const double r = (x[i] - y[i]) / spec.bandwidth;
        p /= 1.0 + r * r;
      }
      return p;
    }
    case KernelFamily::linear:
      return x.dot(y);
  }
  throw std::invalid_argument("unknown kernel family");
}

// Dense Gram matrix; used by the oracles and the PSD property checks.
inline Matrix gram_matrix(const KernelSpec& spec, const Matrix& X) {
  if (X.cols() != spec.dim) {
    throw std::invalid_argument("gram_matrix: data dimension mismatch");
  }
  if (!X.allFinite()) {
    throw std::invalid_argument("gram_matrix: non-finite data");
  }
  const Index n = X.rows();
  Matrix K(n, n);
  for (Index i = 0; i < n; ++i) {
    K(i, i) = kernel_eval(spec, X.row(i), X.row(i));
    for (Index j = i + 1; j < n; ++j) {
      const double v = kernel_eval(spec, X.row(i), X.row(j));
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

// Median of pairwise Euclidean distances over a seeded subsample.
// Even pair counts take the average of the two middle order statistics.
inline double median_bandwidth(const Matrix& data, Index subsample,
                               std::uint64_t seed) {
  const Index n = data.rows();
  if (n < 2) throw std::invalid_argument("median_bandwidth needs >= 2 rows");
  if (subsample < 2) throw std::invalid_argument("subsample must be >= 2");
  if (!data.allFinite()) {
    throw std::invalid_argument("median_bandwidth: non-finite data");
  }
  const Index s = std::min(subsample, n);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < s; ++i) {
    const double u = rng::u01(seed, rng::kTagBandwidthSubsample,
                              static_cast<std::uint64_t>(i), 0, 0);
    const Index j = i + static_cast<Index>(u * static_cast<double>(n - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(s * (s - 1) / 2));
  for (Index a = 0; a < s; ++a) {
    for (Index b = a + 1; b < s; ++b) {
      dist.push_back((data.row(idx[static_cast<std::size_t>(a)]) -
                      data.row(idx[static_cast<std::size_t>(b)]))
                         .norm());
    }
  }
  const std::size_t m = dist.size();
  const std::size_t mid = m / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid),
                   dist.end());
  double med = dist[mid];
  if (m % 2 == 0) {
    const double lower =
        *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  if (med <= 0.0) {
    throw std::runtime_error("median pairwise distance is zero; "
                             "sampled points are identical");
  }
  return med;
}

// One mini-batch of random features, regenerable from (seed, block_index).
// The linear family uses the identity feature map: count = dim, no
// frequencies, scale 1 (see identity_block).
struct FeatureBlock {
  std::uint64_t block_index = 0;
  std::uint64_t seed = 0;
  Index count = 0;
  Matrix frequencies;  // count x dim (empty for the linear family)
  Vector phases;       // count, in [0, 2*pi)
  KernelFamily family = KernelFamily::gaussian;
  double scale = 1.0;  // 1/sqrt(count); folds the Monte Carlo average
};

inline FeatureBlock sample_feature_block(const KernelSpec& spec, std::uint64_t seed,
                                         std::uint64_t block_index, Index count) {
  if (count < 1) throw std::invalid_argument("feature count must be >= 1");
  if (spec.family == KernelFamily::linear) {
    throw std::invalid_argument(
        "linear kernel has no sampled features; it uses the identity map");
  }
  FeatureBlock blk;
  blk.block_index = block_index;
  blk.seed = seed;
  blk.count = count;
  blk.family = spec.family;
  blk.scale = 1.0 / std::sqrt(static_cast<double>(count));
  blk.frequencies.resize(count, spec.dim);
  for (Index r = 0; r < count; ++r) {
    for (Index c = 0; c < spec.dim; ++c) {
      const auto ur = static_cast<std::uint64_t>(r);
      const auto uc = static_cast<std::uint64_t>(c);
      double w = 0.0;
      switch (spec.family) {
        case KernelFamily::gaussian:
          // spectral density N(0, sigma^-2 I)
          w = rng::normal(seed, rng::kTagFrequency, block_index, ur, uc) /
              spec.bandwidth;
          break;
        case KernelFamily::laplacian:
          // coordinates i.i.d. Cauchy(0, 1/scale)
          w = rng::cauchy(seed, rng::kTagFrequency, block_index, ur, uc) /
              spec.bandwidth;
          break;
        case KernelFamily::cauchy:
          // coordinates i.i.d. Laplace(0, 1/scale)
          w = rng::laplace(seed, rng::kTagFrequency, block_index, ur, uc,
                           1.0 / spec.bandwidth);
          break;
        case KernelFamily::linear:
          break;  // unreachable
      }
      blk.frequencies(r, c) = w;
    }
  }
  blk.phases.resize(count);
  for (Index r = 0; r < count; ++r) {
    blk.phases[r] = 2.0 * std::numbers::pi *
                    rng::u01(seed, rng::kTagPhase, block_index,
                             static_cast<std::uint64_t>(r), 0);
  }
  return blk;
}

// The linear family's single feature block: phi(x) = x.
inline FeatureBlock identity_block(const KernelSpec& spec) {
  if (spec.family != KernelFamily::linear) {
    throw std::invalid_argument("identity_block is only for the linear family");
  }
  FeatureBlock blk;
  blk.block_index = 0;
  blk.seed = 0;
  blk.count = spec.dim;
  blk.family = KernelFamily::linear;
  blk.scale = 1.0;
  return blk;
}

// Feature evaluations for a batch of rows: entry (r,c) is
// scale * sqrt(2) * cos(w_c' x_r + b_c); the linear family returns X itself.
inline Matrix feature_matrix(const FeatureBlock& block, const Matrix& X) {
  if (!X.allFinite()) {
    throw std::invalid_argument("feature_matrix: non-finite input");
  }
  if (block.family == KernelFamily::linear) {
    if (X.cols() != block.count) {
      throw std::invalid_argument("feature_matrix: dimension mismatch");
    }
    return X;
  }
  if (X.cols() != block.frequencies.cols()) {
    throw std::invalid_argument("feature_matrix: dimension mismatch");
  }
  Matrix phase = X * block.frequencies.transpose();  // m x count
  phase.rowwise() += block.phases.transpose();
  return (phase.array().cos() * (block.scale * std::numbers::sqrt2)).matrix();
}

}  // namespace dskca
