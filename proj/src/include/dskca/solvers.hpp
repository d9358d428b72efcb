#pragma once

// The four streaming update rules and the fit driver. Each step draws a data
// mini-batch and a feature mini-batch; the model is corrected in span
// (scale_all) and extended (append_block) or adjusted in place (revisit).
// With the linear kernel every step revisits the identity block, which makes
// the iteration coincide with the dense Oja update G(I - eta h h') + eta X'H/B.

#include <Eigen/Dense>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dskca/diagnostics.hpp"
#include "dskca/model.hpp"

namespace dskca {

enum class Task { kpca, gha, ksvd, kcca };

inline std::string task_name(Task t) {
  switch (t) {
    case Task::kpca: return "kpca";
    case Task::gha: return "gha";
    case Task::ksvd: return "ksvd";
    case Task::kcca: return "kcca";
  }
  throw std::invalid_argument("unknown task");
}

inline Task task_from_name(const std::string& s) {
  if (s == "kpca") return Task::kpca;
  if (s == "gha") return Task::gha;
  if (s == "ksvd") return Task::ksvd;
  if (s == "kcca") return Task::kcca;
  throw std::invalid_argument("unknown task: " + s);
}

enum class RevisitPolicy { cycle, none };
enum class SamplingPolicy { epoch_shuffle, with_replacement };

struct StepSchedule {
  double theta0 = 1.0;
  double theta1 = 0.0;
};

inline double step_size(const StepSchedule& s, long i) {
  if (i < 1) throw std::invalid_argument("step_size: iteration index must be >= 1");
  if (!(s.theta0 > 0.0) || s.theta1 < 0.0) {
    throw std::invalid_argument("step_size: need theta0 > 0 and theta1 >= 0");
  }
  return s.theta0 / (1.0 + s.theta1 * static_cast<double>(i));
}

struct TrainConfig {
  int k = 1;
  long iterations = 0;
  Index data_batch = 1;
  Index feature_batch = 1;
  long total_features = 0;
  StepSchedule schedule;
  std::uint64_t seed = 0;
  RevisitPolicy revisit = RevisitPolicy::cycle;
  SamplingPolicy sampling = SamplingPolicy::epoch_shuffle;
  double ridge = 0.0;  // kcca only
  long trace_stride = 100;
  bool store_frequencies = false;
};

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(double max_abs)
      : std::runtime_error(""), max_abs_h_(max_abs) {
    rebuild();
  }
  void set_iteration(long t) {
    iteration_ = t;
    rebuild();
  }
  long iteration() const { return iteration_; }
  double max_abs_h() const { return max_abs_h_; }
  const char* what() const noexcept override { return message_.c_str(); }

 private:
  void rebuild() {
    char mag[32];
    std::snprintf(mag, sizeof mag, "%.6g", max_abs_h_);
    message_ = "divergence detected";
    if (iteration_ >= 0) message_ += " at iteration " + std::to_string(iteration_);
    message_ += "; max |h| = ";
    message_ += mag;
    message_ += " (reduce theta0 or the batch sizes)";
  }
  long iteration_ = -1;
  double max_abs_h_ = 0.0;
  std::string message_;
};

namespace detail {

// Low enough that one more cubic-growth step cannot overflow the
// coefficients before the next check fires: with max |h| <= c the following
// update scales like eta * c^3, which must stay below DBL_MAX ~ 1e308.
inline constexpr double kDivergenceCeiling = 1e100;

inline std::size_t revisit_position(const CoefficientModel& m,
                                    const FeatureBlock& block) {
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    if (m.blocks[i].block_index == block.block_index) {
      if (m.blocks[i].alpha.rows() != block.count) {
        throw std::invalid_argument("revisit step: block feature count mismatch");
      }
      return i;
    }
  }
  throw std::invalid_argument("revisit step: block index not present in model");
}

inline double max_batch_norm(const Matrix& H) {
  double best = 0.0;
  for (Index j = 0; j < H.cols(); ++j) {
    best = std::max(best, std::sqrt(H.col(j).squaredNorm() /
                                    static_cast<double>(H.rows())));
  }
  return best;
}

// Shared body of the KPCA and GHA steps; GHA zeroes the strictly lower
// triangle of the contraction matrix so components deflate one another.
inline double oja_like_step(CoefficientModel& m, const Matrix& X,
                            const FeatureBlock& block, double eta, bool revisit,
                            bool upper_triangular) {
  const Index bx = X.rows();
  if (bx < 1) throw std::invalid_argument("step: empty data batch");
  const Matrix H = evaluate(m, X);
  const double mx = H.cwiseAbs().maxCoeff();
  if (mx > kDivergenceCeiling) throw DivergenceError(mx);

  // Column-wise products keep column j's arithmetic independent of the
  // columns after it, so GHA column 1 tracks a k=1 run bit-exactly.
  Matrix C(m.k, m.k);
  for (Index j = 0; j < m.k; ++j) {
    for (Index i = 0; i < m.k; ++i) {
      C(i, j) = upper_triangular && i > j
                    ? 0.0
                    : H.col(i).dot(H.col(j)) / static_cast<double>(bx);
    }
  }
  const Matrix phi = feature_matrix(block, X);
  const double w = eta / static_cast<double>(bx);
  Matrix alpha_add(phi.cols(), m.k);
  for (Index j = 0; j < m.k; ++j) {
    alpha_add.col(j) = w * (phi.transpose() * H.col(j));
  }
  const Matrix M = Matrix::Identity(m.k, m.k) - eta * C;
  scale_all(m, M);
  if (revisit) {
    m.blocks[revisit_position(m, block)].alpha += alpha_add;
  } else {
    append_block(m, block, alpha_add);
  }
  return max_batch_norm(H);
}

}  // namespace detail

// One doubly stochastic KPCA step. Returns the largest per-column empirical
// norm of the pre-update batch evaluations (the trace's h_norm_max).
inline double kpca_step(CoefficientModel& m, const Matrix& X,
                        const FeatureBlock& block, double eta,
                        bool revisit = false) {
  return detail::oja_like_step(m, X, block, eta, revisit, false);
}

// GHA step: KPCA step with the contraction restricted to the upper triangle.
// Column 1 evolves exactly as a k=1 KPCA run on the same streams.
inline double gha_step(CoefficientModel& m, const Matrix& X,
                       const FeatureBlock& block, double eta,
                       bool revisit = false) {
  return detail::oja_like_step(m, X, block, eta, revisit, true);
}

// Paired KSVD step: both sides contract with W = (U'V + V'U)/B and each side
// appends the cross-view correction.
inline double ksvd_step(PairedModel& pm, const Matrix& X, const Matrix& Y,
                        const FeatureBlock& block_x, const FeatureBlock& block_y,
                        double eta, bool revisit_left = false,
                        bool revisit_right = false) {
  if (X.rows() != Y.rows()) {
    throw std::invalid_argument("ksvd_step: paired batch sizes differ");
  }
  const Index b = X.rows();
  if (b < 1) throw std::invalid_argument("ksvd_step: empty data batch");
  if (pm.left.k != pm.right.k) {
    throw std::invalid_argument("ksvd_step: paired models must share k");
  }
  const Matrix U = evaluate(pm.left, X);
  const Matrix V = evaluate(pm.right, Y);
  const double mx = std::max(U.cwiseAbs().maxCoeff(), V.cwiseAbs().maxCoeff());
  if (mx > detail::kDivergenceCeiling) throw DivergenceError(mx);

  const Matrix W = (U.transpose() * V + V.transpose() * U) / static_cast<double>(b);
  const Matrix phix = feature_matrix(block_x, X);
  const Matrix phiy = feature_matrix(block_y, Y);
  const Matrix add_l = (eta / static_cast<double>(b)) * (phix.transpose() * V);
  const Matrix add_r = (eta / static_cast<double>(b)) * (phiy.transpose() * U);
  const Matrix M = Matrix::Identity(pm.left.k, pm.left.k) - eta * W;
  scale_all(pm.left, M);
  scale_all(pm.right, M);
  if (revisit_left) {
    pm.left.blocks[detail::revisit_position(pm.left, block_x)].alpha += add_l;
  } else {
    append_block(pm.left, block_x, add_l);
  }
  if (revisit_right) {
    pm.right.blocks[detail::revisit_position(pm.right, block_y)].alpha += add_r;
  } else {
    append_block(pm.right, block_y, add_r);
  }
  return std::max(detail::max_batch_norm(U), detail::max_batch_norm(V));
}

// Paired KCCA step: all correction lives in the new coefficients
// (no contraction of existing blocks). ridge > 0 augments W with the
// within-view second moments.
inline double kcca_step(PairedModel& pm, const Matrix& X, const Matrix& Y,
                        const FeatureBlock& block_x, const FeatureBlock& block_y,
                        double eta, bool revisit_left = false,
                        bool revisit_right = false, double ridge = 0.0) {
  if (X.rows() != Y.rows()) {
    throw std::invalid_argument("kcca_step: paired batch sizes differ");
  }
  const Index b = X.rows();
  if (b < 1) throw std::invalid_argument("kcca_step: empty data batch");
  if (pm.left.k != pm.right.k) {
    throw std::invalid_argument("kcca_step: paired models must share k");
  }
  if (ridge < 0.0) throw std::invalid_argument("kcca_step: ridge must be >= 0");
  const Matrix U = evaluate(pm.left, X);
  const Matrix V = evaluate(pm.right, Y);
  const double mx = std::max(U.cwiseAbs().maxCoeff(), V.cwiseAbs().maxCoeff());
  if (mx > detail::kDivergenceCeiling) throw DivergenceError(mx);

  Matrix W = (U.transpose() * V + V.transpose() * U) / static_cast<double>(b);
  if (ridge > 0.0) {
    W += ridge * ((U.transpose() * U + V.transpose() * V) / static_cast<double>(b));
  }
  const Matrix phix = feature_matrix(block_x, X);
  const Matrix phiy = feature_matrix(block_y, Y);
  const Matrix add_l =
      (eta / static_cast<double>(b)) * (phix.transpose() * (V - U * W));
  const Matrix add_r =
      (eta / static_cast<double>(b)) * (phiy.transpose() * (U - V * W));
  if (revisit_left) {
    pm.left.blocks[detail::revisit_position(pm.left, block_x)].alpha += add_l;
  } else {
    append_block(pm.left, block_x, add_l);
  }
  if (revisit_right) {
    pm.right.blocks[detail::revisit_position(pm.right, block_y)].alpha += add_r;
  } else {
    append_block(pm.right, block_y, add_r);
  }
  return std::max(detail::max_batch_norm(U), detail::max_batch_norm(V));
}

struct TraceProbe {
  Matrix points;     // held-out probe rows (left view for paired tasks)
  Matrix reference;  // ground-truth evaluations on the probe rows
};

struct FitResult {
  Task task = Task::kpca;
  long t = 0;  // iterations completed
  CoefficientModel model;
  std::optional<CoefficientModel> right;
  DiagnosticsTrace trace;
};

namespace detail {

// Deterministic mini-batch index source. Epoch shuffle concatenates seeded
// per-epoch permutations into one stream; step t reads positions
// [t*B, (t+1)*B), so batches may straddle an epoch boundary.
class IndexStream {
 public:
  IndexStream(SamplingPolicy policy, std::uint64_t seed, Index n)
      : policy_(policy), seed_(seed), n_(n) {
    if (n < 1) throw std::invalid_argument("fit: empty data");
  }

  void fill(long t, Index batch, std::vector<Index>& out) {
    out.resize(static_cast<std::size_t>(batch));
    if (policy_ == SamplingPolicy::with_replacement) {
      for (Index s = 0; s < batch; ++s) {
        const double u = rng::u01(seed_, rng::kTagReplacementIndex,
                                  static_cast<std::uint64_t>(t),
                                  static_cast<std::uint64_t>(s), 0);
        out[static_cast<std::size_t>(s)] =
            static_cast<Index>(u * static_cast<double>(n_));
      }
      return;
    }
    for (Index s = 0; s < batch; ++s) {
      const long pos = t * static_cast<long>(batch) + static_cast<long>(s);
      const long epoch = pos / static_cast<long>(n_);
      const Index offset = static_cast<Index>(pos % static_cast<long>(n_));
      if (epoch != epoch_) load_epoch(epoch);
      out[static_cast<std::size_t>(s)] = perm_[static_cast<std::size_t>(offset)];
    }
  }

 private:
  void load_epoch(long e) {
    perm_.resize(static_cast<std::size_t>(n_));
    for (Index i = 0; i < n_; ++i) perm_[static_cast<std::size_t>(i)] = i;
    for (Index i = 0; i + 1 < n_; ++i) {
      const double u = rng::u01(seed_, rng::kTagEpochPerm,
                                static_cast<std::uint64_t>(e),
                                static_cast<std::uint64_t>(i), 0);
      const Index j = i + static_cast<Index>(u * static_cast<double>(n_ - i));
      std::swap(perm_[static_cast<std::size_t>(i)],
                perm_[static_cast<std::size_t>(j)]);
    }
    epoch_ = e;
  }

  SamplingPolicy policy_;
  std::uint64_t seed_;
  Index n_;
  std::vector<Index> perm_;
  long epoch_ = -1;
};

// Per-model feature-block planner: fresh blocks until the budget is spent,
// then ascending cyclic revisits over all existing blocks (the linear family
// always revisits its identity block).
class BlockPlanner {
 public:
  BlockPlanner(const KernelSpec& spec, std::uint64_t run_seed, Index feature_batch,
               long total_features)
      : spec_(spec), run_seed_(run_seed), feature_batch_(feature_batch) {
    if (spec.family == KernelFamily::linear) {
      budget_blocks_ = 0;
    } else {
      budget_blocks_ = total_features / static_cast<long>(feature_batch);
    }
  }

  // Returns the block for this step and whether it revisits the model.
  std::pair<FeatureBlock, bool> next(const CoefficientModel& m) {
    if (spec_.family == KernelFamily::linear) {
      return {identity_block(spec_), true};
    }
    if (created_ < budget_blocks_) {
      FeatureBlock blk = sample_feature_block(
          spec_, run_seed_, static_cast<std::uint64_t>(1 + created_), feature_batch_);
      ++created_;
      return {std::move(blk), false};
    }
    const std::size_t pos =
        static_cast<std::size_t>(revisit_counter_ % static_cast<long>(m.blocks.size()));
    ++revisit_counter_;
    return {materialize_block(m, pos), true};
  }

 private:
  KernelSpec spec_;
  std::uint64_t run_seed_;
  Index feature_batch_;
  long budget_blocks_ = 0;
  long created_ = 0;
  long revisit_counter_ = 0;
};

inline void validate_config(const TrainConfig& cfg, const KernelSpec& spec) {
  if (cfg.k < 1) throw std::invalid_argument("fit: k must be >= 1");
  if (cfg.iterations < 0) throw std::invalid_argument("fit: iterations must be >= 0");
  if (cfg.data_batch < 1 || cfg.feature_batch < 1) {
    throw std::invalid_argument("fit: batch sizes must be >= 1");
  }
  if (cfg.trace_stride < 1) {
    throw std::invalid_argument("fit: trace_stride must be >= 1");
  }
  if (spec.family == KernelFamily::linear) return;
  if (cfg.total_features < cfg.feature_batch) {
    throw std::invalid_argument("fit: total_features must be >= feature_batch");
  }
  if (cfg.total_features % cfg.feature_batch != 0) {
    throw std::invalid_argument(
        "fit: total_features must be a multiple of feature_batch");
  }
  if (cfg.revisit == RevisitPolicy::none &&
      cfg.iterations * static_cast<long>(cfg.feature_batch) > cfg.total_features) {
    throw std::invalid_argument(
        "fit: revisit=none requires iterations * feature_batch <= total_features");
  }
}

}  // namespace detail

// Run the streaming solver. Fully deterministic given (config.seed, data);
// the trace records every trace_stride steps plus the final step.
inline FitResult fit(Task task, const Matrix& X, const std::optional<Matrix>& Y,
                     const KernelSpec& spec_x, const std::optional<KernelSpec>& spec_y,
                     const TrainConfig& cfg,
                     const std::optional<TraceProbe>& probe = {}) {
  const bool paired = task == Task::ksvd || task == Task::kcca;
  detail::validate_config(cfg, spec_x);
  if (paired) {
    if (!Y || !spec_y) {
      throw std::invalid_argument("fit: paired tasks need a second view");
    }
    if (Y->rows() != X.rows()) {
      throw std::invalid_argument("fit: paired views must have equal row counts");
    }
    detail::validate_config(cfg, *spec_y);
  } else if (Y) {
    throw std::invalid_argument("fit: single-view tasks take no second view");
  }
  if (X.rows() < 1) throw std::invalid_argument("fit: empty data");
  if (X.cols() != spec_x.dim || (paired && Y->cols() != spec_y->dim)) {
    throw std::invalid_argument("fit: data dimension does not match kernel spec");
  }
  if (probe && probe->reference.cols() != cfg.k) {
    throw std::invalid_argument("fit: probe reference must have k columns");
  }

  FitResult result;
  result.task = task;
  result.model = init_model(spec_x, cfg.k, cfg.feature_batch, cfg.seed,
                            cfg.store_frequencies);
  detail::BlockPlanner plan_x(spec_x, cfg.seed, cfg.feature_batch,
                              cfg.total_features);
  std::optional<detail::BlockPlanner> plan_y;
  if (paired) {
    const std::uint64_t right_seed =
        rng::word(cfg.seed, rng::kTagPairedRightSeed, 0, 0, 0);
    result.right = init_model(*spec_y, cfg.k, cfg.feature_batch, right_seed,
                              cfg.store_frequencies);
    plan_y.emplace(*spec_y, right_seed, cfg.feature_batch, cfg.total_features);
  }

  detail::IndexStream stream(cfg.sampling, cfg.seed, X.rows());
  std::vector<Index> idx;
  Matrix xb(cfg.data_batch, X.cols());
  Matrix yb(cfg.data_batch, paired ? Y->cols() : 0);
  bool warned_norm = false;
  const auto start = std::chrono::steady_clock::now();

  for (long t = 1; t <= cfg.iterations; ++t) {
    const double eta = step_size(cfg.schedule, t);
    stream.fill(t - 1, cfg.data_batch, idx);
    for (Index s = 0; s < cfg.data_batch; ++s) {
      xb.row(s) = X.row(idx[static_cast<std::size_t>(s)]);
      if (paired) yb.row(s) = Y->row(idx[static_cast<std::size_t>(s)]);
    }

    double h_norm = 0.0;
    try {
      auto [bx, rx] = plan_x.next(result.model);
      if (rx && cfg.revisit == RevisitPolicy::none &&
          spec_x.family != KernelFamily::linear) {
        throw std::runtime_error("fit: feature budget exhausted with revisit=none");
      }
      switch (task) {
        case Task::kpca:
          h_norm = kpca_step(result.model, xb, bx, eta, rx);
          break;
        case Task::gha:
          h_norm = gha_step(result.model, xb, bx, eta, rx);
          break;
        case Task::ksvd:
        case Task::kcca: {
          auto pair_blk = plan_y->next(*result.right);
          PairedModel pm{std::move(result.model), std::move(*result.right)};
          if (task == Task::ksvd) {
            h_norm = ksvd_step(pm, xb, yb, bx, pair_blk.first, eta, rx,
                               pair_blk.second);
          } else {
            h_norm = kcca_step(pm, xb, yb, bx, pair_blk.first, eta, rx,
                               pair_blk.second, cfg.ridge);
          }
          result.model = std::move(pm.left);
          *result.right = std::move(pm.right);
          break;
        }
      }
    } catch (DivergenceError& e) {
      e.set_iteration(t);
      throw;
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("fit: iteration " + std::to_string(t) + ": " +
                               e.what());
    }
    result.t = t;

    if (t % cfg.trace_stride == 0 || t == cfg.iterations) {
      result.trace.iterations.push_back(t);
      result.trace.h_norm_max.push_back(h_norm);
      result.trace.wall_clock.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
              .count());
      if (probe) {
        const Matrix eh = evaluate(result.model, probe->points);
        result.trace.potential.push_back(
            sin2_subspace_empirical(probe->reference, eh));
      }
      if (!warned_norm && (h_norm < 0.1 || h_norm > 10.0)) {
        warned_norm = true;
        std::cerr << "warning: h norm estimate " << h_norm
                  << " outside [0.1, 10] at iteration " << t << "\n";
      }
    }
  }
  return result;
}

inline FitResult fit(Task task, const Matrix& X, const KernelSpec& spec,
                     const TrainConfig& cfg,
                     const std::optional<TraceProbe>& probe = {}) {
  return fit(task, X, std::nullopt, spec, std::nullopt, cfg, probe);
}

inline FitResult fit_paired(Task task, const Matrix& X, const Matrix& Y,
                            const KernelSpec& spec_x, const KernelSpec& spec_y,
                            const TrainConfig& cfg,
                            const std::optional<TraceProbe>& probe = {}) {
  return fit(task, X, std::optional<Matrix>(Y), spec_x,
             std::optional<KernelSpec>(spec_y), cfg, probe);
}

}  // namespace dskca
