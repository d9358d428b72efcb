#pragma once

// Coefficient models: k functions represented as sums of feature-block
// evaluations, h(x) = sum_b Phi_b(x) * alpha_b. Blocks are identified by
// (run_seed, block_index) and regenerated on demand unless caching is on,
// so a trained model stores only coefficients.

#include <Eigen/Dense>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dskca/kernel_features.hpp"

namespace dskca {

struct ModelBlock {
  std::uint64_t block_index = 0;
  Matrix alpha;  // count x k
  std::optional<FeatureBlock> cached;
};

struct CoefficientModel {
  int k = 1;
  KernelSpec spec;
  std::uint64_t run_seed = 0;
  bool store_frequencies = false;
  std::vector<ModelBlock> blocks;  // indices contiguous from 0
};

struct PairedModel {
  CoefficientModel left;
  CoefficientModel right;  // same k; spec may differ per view
};

namespace detail {

// Column-prefix-stable modified Gram-Schmidt: column j of the result depends
// only on columns 0..j of the input, so a k=1 run and column 1 of a k=3 run
// started from the same draws agree bit for bit.
inline Matrix orthonormal_columns(const Matrix& A) {
  Matrix Q = A;
  const Index k = A.cols();
  for (Index j = 0; j < k; ++j) {
    for (Index l = 0; l < j; ++l) {
      const double proj = Q.col(l).dot(Q.col(j));
      Q.col(j) -= proj * Q.col(l);
    }
    const double nrm = Q.col(j).norm();
    if (!(nrm > 1e-12)) {
      throw std::runtime_error("orthonormal_columns: rank-deficient input");
    }
    Q.col(j) /= nrm;
  }
  return Q;
}

inline int env_thread_cap() {
  if (const char* s = std::getenv("DSKCA_THREADS")) {
    const int v = std::atoi(s);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace detail

// Materialize the features behind a model block: cached copy if present,
// identity map for the linear family, fresh regeneration otherwise.
inline FeatureBlock materialize_block(const CoefficientModel& m, std::size_t pos) {
  const ModelBlock& blk = m.blocks.at(pos);
  if (blk.cached) return *blk.cached;
  if (m.spec.family == KernelFamily::linear) return identity_block(m.spec);
  return sample_feature_block(m.spec, m.run_seed, blk.block_index,
                              blk.alpha.rows());
}

// Fresh model holding one feature block whose coefficients are a seeded
// random matrix with orthonormal columns, rescaled by 1/scale so the induced
// functions have O(1) empirical norm. A zero start would be a fixed point of
// every update rule, so the initial block is never zero.
inline CoefficientModel init_model(const KernelSpec& spec, int k, Index b_omega,
                                   std::uint64_t seed,
                                   bool store_frequencies = false) {
  if (k < 1) throw std::invalid_argument("init_model: k must be >= 1");
  const Index count =
      spec.family == KernelFamily::linear ? static_cast<Index>(spec.dim) : b_omega;
  if (count < k) {
    throw std::invalid_argument(
        "init_model: feature count must be >= k to build k independent columns");
  }
  CoefficientModel m;
  m.k = k;
  m.spec = spec;
  m.run_seed = seed;
  m.store_frequencies = store_frequencies;

  Matrix A(count, k);
  for (Index r = 0; r < count; ++r) {
    for (Index c = 0; c < k; ++c) {
      A(r, c) = rng::normal(seed, rng::kTagInitAlpha, 0,
                            static_cast<std::uint64_t>(r),
                            static_cast<std::uint64_t>(c));
    }
  }
  ModelBlock blk;
  blk.block_index = 0;
  FeatureBlock features = spec.family == KernelFamily::linear
                              ? identity_block(spec)
                              : sample_feature_block(spec, seed, 0, count);
  blk.alpha = detail::orthonormal_columns(A) / features.scale;
  if (store_frequencies) blk.cached = std::move(features);
  m.blocks.push_back(std::move(blk));
  return m;
}

namespace detail {

inline void evaluate_rows(const CoefficientModel& m,
                          const std::vector<FeatureBlock>& features,
                          const Matrix& X, Index row0, Index rows, Matrix& H) {
  const auto block = X.middleRows(row0, rows);
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    const Matrix phi = feature_matrix(features[b], block);
    for (Index j = 0; j < m.k; ++j) {
      H.col(j).segment(row0, rows).noalias() += phi * m.blocks[b].alpha.col(j);
    }
  }
}

}  // namespace detail

// h(x) for every row of X; blocks accumulate in ascending block_index order
// within each row, so the result is bit-identical for any thread count.
inline Matrix evaluate(const CoefficientModel& m, const Matrix& X) {
  if (X.cols() != m.spec.dim) {
    throw std::invalid_argument("evaluate: data dimension mismatch");
  }
  if (!X.allFinite()) throw std::invalid_argument("evaluate: non-finite input");
  Matrix H = Matrix::Zero(X.rows(), m.k);
  if (m.blocks.empty()) return H;

  std::vector<FeatureBlock> features;
  features.reserve(m.blocks.size());
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    if (!m.blocks[b].alpha.allFinite()) {
      throw std::runtime_error("evaluate: non-finite coefficients in block " +
                               std::to_string(m.blocks[b].block_index));
    }
    if (m.blocks[b].alpha.cols() != m.k) {
      throw std::invalid_argument("evaluate: block column count != k");
    }
    features.push_back(materialize_block(m, b));
  }

  const Index n = X.rows();
  const int threads = std::min<int>(detail::env_thread_cap(),
                                    static_cast<int>((n + 255) / 256));
  if (threads <= 1) {
    detail::evaluate_rows(m, features, X, 0, n, H);
  } else {
    std::vector<std::thread> pool;
    const Index chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const Index row0 = static_cast<Index>(t) * chunk;
      if (row0 >= n) break;
      const Index rows = std::min(chunk, n - row0);
      pool.emplace_back([&, row0, rows] {
        detail::evaluate_rows(m, features, X, row0, rows, H);
      });
    }
    for (auto& th : pool) th.join();
  }

  if (!H.allFinite()) {
    // Attribute the failure: rerun serially block by block.
    Matrix partial = Matrix::Zero(X.rows(), m.k);
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
      const Matrix phi = feature_matrix(features[b], X);
      partial.noalias() += phi * m.blocks[b].alpha;
      if (!partial.allFinite()) {
        throw std::runtime_error(
            "evaluate: non-finite accumulation at block " +
            std::to_string(m.blocks[b].block_index));
      }
    }
    throw std::runtime_error("evaluate: non-finite accumulation");
  }
  return H;
}

// Append a fresh block; indices must stay contiguous.
inline void append_block(CoefficientModel& m, const FeatureBlock& block,
                         const Matrix& alpha_new) {
  const std::uint64_t expect =
      m.blocks.empty() ? 0 : m.blocks.back().block_index + 1;
  if (block.block_index != expect) {
    throw std::invalid_argument("append_block: non-contiguous block index");
  }
  if (block.family != m.spec.family) {
    throw std::invalid_argument("append_block: kernel family mismatch");
  }
  if (alpha_new.rows() != block.count || alpha_new.cols() != m.k) {
    throw std::invalid_argument("append_block: alpha shape mismatch");
  }
  if (!alpha_new.allFinite()) {
    throw std::invalid_argument("append_block: non-finite alpha");
  }
  ModelBlock blk;
  blk.block_index = block.block_index;
  blk.alpha = alpha_new;
  if (m.store_frequencies) blk.cached = block;
  m.blocks.push_back(std::move(blk));
}

// Right-multiply every block's coefficients by M, so that
// evaluate(model', x) = evaluate(model, x) * M exactly. Column-wise
// accumulation in fixed order keeps column j a function of columns l with
// M(l,j) != 0 only, preserving the exact GHA column-1 property.
inline void scale_all(CoefficientModel& m, const Matrix& M) {
  if (M.rows() != m.k || M.cols() != m.k) {
    throw std::invalid_argument("scale_all: M must be k x k");
  }
  if (!M.allFinite()) throw std::invalid_argument("scale_all: non-finite M");
  for (auto& blk : m.blocks) {
    Matrix out(blk.alpha.rows(), m.k);
    for (Index j = 0; j < m.k; ++j) {
      out.col(j) = blk.alpha.col(0) * M(0, j);
      for (Index l = 1; l < m.k; ++l) {
        out.col(j) += blk.alpha.col(l) * M(l, j);
      }
    }
    blk.alpha = std::move(out);
  }
}

}  // namespace dskca
